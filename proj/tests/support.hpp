#pragma once

#include <cstring>
#include <filesystem>
#include <random>
#include <string>

#include "sdgan/image.hpp"
#include "sdgan/nn.hpp"
#include "sdgan/tensor.hpp"

namespace sdgan::testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("sdgan_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

template <typename Scalar = float>
Tensor<Scalar> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<Scalar> t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(u(rng));
  return t;
}

inline ImageTensor random_image(std::mt19937_64& rng, int resolution = 32) {
  return random_tensor<float>({3, resolution, resolution}, rng, 0.0, 1.0);
}

template <typename Scalar>
void zero_params(nn::ParamSet<Scalar>& ps) {
  for (auto& p : ps.all()) p.value.data().setZero();
}

inline bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && (a.size() == 0 || std::memcmp(a.ptr(), b.ptr(), a.size() * sizeof(float)) == 0);
}

}  // namespace sdgan::testing

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "sdgan/errors.hpp"

namespace sdgan {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                         [](std::int64_t a, int b) { return a * b; });
}

inline std::string shape_string(const Shape& shape);

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense row-major n-d array. Images and feature maps use (C, H, W).
template <typename Scalar>
class Tensor {
 public:
  using Vector = VectorX<Scalar>;
  using MatrixMap = Eigen::Map<RowMatrixX<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrixX<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Vector::Zero(shape_numel(shape_))) {}

  Tensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(data_.size() == shape_numel(shape_), ErrorKind::ShapeMismatch,
            "payload of " + std::to_string(data_.size()) + " values for shape " + shape_string(shape_));
  }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  Eigen::Index size() const { return data_.size(); }

  Vector& data() { return data_; }
  const Vector& data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  // (c, y, x) access for rank-3 tensors.
  Scalar& at(int c, int y, int x) { return data_[(static_cast<Eigen::Index>(c) * shape_[1] + y) * shape_[2] + x]; }
  Scalar at(int c, int y, int x) const {
    return data_[(static_cast<Eigen::Index>(c) * shape_[1] + y) * shape_[2] + x];
  }

  MatrixMap matrix(Eigen::Index rows, Eigen::Index cols) {
    require(rows * cols == size(), ErrorKind::ShapeMismatch, "matrix view size");
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Eigen::Index rows, Eigen::Index cols) const {
    require(rows * cols == size(), ErrorKind::ShapeMismatch, "matrix view size");
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

  bool all_finite() const { return data_.allFinite(); }

  bool operator==(const Tensor& other) const { return shape_ == other.shape_ && data_ == other.data_; }

 private:
  Shape shape_;
  Vector data_;
};

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  require(a.shape() == b.shape(), ErrorKind::ShapeMismatch,
          std::string(what) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

}  // namespace sdgan

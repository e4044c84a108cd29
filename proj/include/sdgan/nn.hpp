#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "sdgan/autograd.hpp"

namespace sdgan::nn {

// Ordered, name-addressable parameter collection with stable addresses
// (graphs keep pointers to the parameters they bind).
template <typename Scalar>
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other) { *this = other; }
  ParamSet& operator=(const ParamSet& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) add(p.name, p.value, p.trainable);
    return *this;
  }
  ParamSet(ParamSet&&) = default;
  ParamSet& operator=(ParamSet&&) = default;

  Parameter<Scalar>& add(const std::string& name, Tensor<Scalar> init, bool trainable = true) {
    require(!index_.count(name), ErrorKind::InvalidArgument, "duplicate parameter " + name);
    params_.push_back(Parameter<Scalar>{name, std::move(init), trainable});
    index_[name] = params_.size() - 1;
    return params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Parameter<Scalar>& operator[](const std::string& name) {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::InvalidArgument, "no parameter named " + name);
    return params_[it->second];
  }
  const Parameter<Scalar>& operator[](const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::InvalidArgument, "no parameter named " + name);
    return params_[it->second];
  }

  std::deque<Parameter<Scalar>>& all() { return params_; }
  const std::deque<Parameter<Scalar>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void set_trainable(bool trainable) {
    for (auto& p : params_) p.trainable = trainable;
  }

  Eigen::Index count() const {
    Eigen::Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  template <typename Other>
  ParamSet<Other> cast() const {
    ParamSet<Other> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<Other>(), p.trainable);
    return out;
  }

  std::map<std::string, Tensor<float>> export_tensors(const std::string& prefix = "") const {
    std::map<std::string, Tensor<float>> out;
    for (const auto& p : params_) out.emplace(prefix + p.name, p.value.template cast<float>());
    return out;
  }

  // Replaces every parameter value from `tensors` (keys prefix + name); shapes must match.
  void import_tensors(const std::map<std::string, Tensor<float>>& tensors, const std::string& prefix = "") {
    for (auto& p : params_) {
      auto it = tensors.find(prefix + p.name);
      require(it != tensors.end(), ErrorKind::FormatError, "checkpoint lacks tensor '" + prefix + p.name + "'");
      require(it->second.shape() == p.value.shape(), ErrorKind::DimensionMismatch,
              "tensor '" + prefix + p.name + "' has shape " + shape_string(it->second.shape()) + ", expected " +
                  shape_string(p.value.shape()));
      p.value = it->second.template cast<Scalar>();
    }
  }

  // FNV-1a over all parameter bytes; equal fingerprints mean bitwise-equal weights.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
      }
    };
    for (const auto& p : params_) {
      mix(p.name.data(), p.name.size());
      mix(p.value.ptr(), static_cast<std::size_t>(p.value.size()) * sizeof(Scalar));
    }
    return h;
  }

 private:
  std::deque<Parameter<Scalar>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Sums per-sample parameter gradients. Accumulation order is the call order,
// so callers feeding samples in index order get reproducible sums.
template <typename Scalar>
class GradBuffer {
 public:
  void add(const std::vector<std::pair<const Parameter<Scalar>*, Tensor<Scalar>>>& grads, Scalar weight = 1) {
    for (const auto& [p, g] : grads) {
      auto it = grads_.find(p);
      if (it == grads_.end())
        grads_.emplace(p, Tensor<Scalar>(g.shape(), g.data() * weight));
      else
        it->second.data() += g.data() * weight;
    }
  }

  const Tensor<Scalar>* find(const Parameter<Scalar>* p) const {
    auto it = grads_.find(p);
    return it == grads_.end() ? nullptr : &it->second;
  }

  bool all_finite() const {
    for (const auto& [p, g] : grads_)
      if (!g.all_finite()) return false;
    return true;
  }

  void clear() { grads_.clear(); }

 private:
  std::map<const Parameter<Scalar>*, Tensor<Scalar>> grads_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void set_lr(double lr) { config_.lr = lr; }
  double lr() const { return config_.lr; }
  long steps() const { return step_; }

  void step(ParamSet<Scalar>& params, const GradBuffer<Scalar>& grads) {
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (auto& p : params.all()) {
      if (!p.trainable) continue;
      const Tensor<Scalar>* g = grads.find(&p);
      if (!g) continue;
      auto& st = state_[p.name];
      if (st.m.size() == 0) {
        st.m = VectorX<Scalar>::Zero(p.value.size());
        st.v = VectorX<Scalar>::Zero(p.value.size());
      }
      const auto b1 = static_cast<Scalar>(config_.beta1), b2 = static_cast<Scalar>(config_.beta2);
      st.m = b1 * st.m + (Scalar(1) - b1) * g->data();
      st.v = b2 * st.v + (Scalar(1) - b2) * g->data().cwiseAbs2();
      const auto step_size = static_cast<Scalar>(config_.lr / c1);
      const auto denom_scale = static_cast<Scalar>(1.0 / std::sqrt(c2));
      const auto eps = static_cast<Scalar>(config_.eps);
      p.value.data().array() -=
          step_size * st.m.array() / (st.v.array().sqrt() * denom_scale + eps);
    }
  }

 private:
  struct State {
    VectorX<Scalar> m, v;
  };
  AdamConfig config_;
  long step_ = 0;
  std::map<std::string, State> state_;
};

// ---------------------------------------------------------------------------
// Initialisers

template <typename Scalar>
Tensor<Scalar> uniform_init(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor<Scalar> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
  return t;
}

// He-style uniform bound for a layer with the given fan-in.
template <typename Scalar>
Tensor<Scalar> fan_in_init(Shape shape, int fan_in, std::mt19937_64& rng, double gain = 1.0) {
  return uniform_init<Scalar>(std::move(shape), gain * std::sqrt(3.0 / fan_in), rng);
}

template <typename Scalar>
void add_conv(ParamSet<Scalar>& ps, const std::string& name, int in_c, int out_c, int k, std::mt19937_64& rng,
              double gain = std::sqrt(2.0)) {
  ps.add(name + ".weight", fan_in_init<Scalar>({out_c, in_c, k, k}, in_c * k * k, rng, gain));
  ps.add(name + ".bias", Tensor<Scalar>({out_c}));
}

template <typename Scalar>
void add_linear(ParamSet<Scalar>& ps, const std::string& name, int in_dim, int out_dim, std::mt19937_64& rng,
                double gain = std::sqrt(2.0)) {
  ps.add(name + ".weight", fan_in_init<Scalar>({out_dim, in_dim}, in_dim, rng, gain));
  ps.add(name + ".bias", Tensor<Scalar>({out_dim}));
}

template <typename Scalar>
Var<Scalar> apply_conv(Graph<Scalar>& g, const ParamSet<Scalar>& ps, const std::string& name, Var<Scalar> x,
                       int stride, int pad) {
  auto w = g.param(ps[name + ".weight"]);
  auto b = g.param(ps[name + ".bias"]);
  return conv2d(x, w, &b, stride, pad);
}

template <typename Scalar>
Var<Scalar> apply_linear(Graph<Scalar>& g, const ParamSet<Scalar>& ps, const std::string& name, Var<Scalar> x) {
  auto w = g.param(ps[name + ".weight"]);
  auto b = g.param(ps[name + ".bias"]);
  return linear(x, w, &b);
}

}  // namespace sdgan::nn

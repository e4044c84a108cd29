#pragma once

#include <Eigen/Dense>

#include <string>

#include "sdgan/errors.hpp"
#include "sdgan/tensor.hpp"

namespace sdgan {

enum class LatentSpace { Z, W };

template <typename Scalar = float>
struct LatentCode {
  VectorX<Scalar> values;
  LatentSpace space = LatentSpace::W;

  Eigen::Index dim() const { return values.size(); }
};

// W+ code: one style row per synthesis layer, L x d.
template <typename Scalar = float>
using ExtendedLatent = RowMatrixX<Scalar>;

// Unit hyperplane normal plus the searched length; the basis vector itself is
// always length * direction.
struct SemanticBasis {
  std::string attribute_id;
  VectorX<float> direction;
  float length = 0.0f;
  float boundary_bias = 0.0f;

  VectorX<float> vector() const { return length * direction; }
};

template <typename Derived>
VectorX<typename Derived::Scalar> normalize_direction(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  require(v.allFinite(), ErrorKind::InvalidArgument, "direction has non-finite entries");
  // Accumulate the norm in double so float inputs normalize to within 1e-7.
  const double norm = v.template cast<double>().norm();
  require(norm >= 1e-12, ErrorKind::ZeroVector, "cannot normalize a vector with norm " + std::to_string(norm));
  return (v.template cast<double>() / norm).template cast<Scalar>();
}

template <typename Scalar>
ExtendedLatent<Scalar> broadcast_to_extended(const LatentCode<Scalar>& w, int layers) {
  require(w.space == LatentSpace::W, ErrorKind::InvalidArgument, "broadcast expects a W-space code");
  require(layers > 0, ErrorKind::InvalidArgument, "layer count must be positive");
  return w.values.transpose().replicate(layers, 1);
}

template <typename Scalar>
ExtendedLatent<Scalar> compose_adjustment(const ExtendedLatent<Scalar>& offset, const SemanticBasis& basis) {
  require(offset.cols() == basis.direction.size(), ErrorKind::ShapeMismatch,
          "offset width " + std::to_string(offset.cols()) + " vs basis dimension " +
              std::to_string(basis.direction.size()));
  if (basis.length == 0.0f) return offset;
  const VectorX<Scalar> nb = (basis.length * basis.direction).template cast<Scalar>();
  return offset.rowwise() + nb.transpose();
}

template <typename Scalar>
ExtendedLatent<Scalar> apply_edit_latent(const LatentCode<Scalar>& w, const ExtendedLatent<Scalar>& adjusted) {
  require(adjusted.cols() == w.dim(), ErrorKind::ShapeMismatch,
          "adjusted code width " + std::to_string(adjusted.cols()) + " vs latent dimension " +
              std::to_string(w.dim()));
  return adjusted.rowwise() + w.values.transpose();
}

inline void check_latent(const LatentCode<float>& w, int d) {
  require(w.dim() == d, ErrorKind::DimensionMismatch,
          "latent has dimension " + std::to_string(w.dim()) + ", expected " + std::to_string(d));
  require(w.values.allFinite(), ErrorKind::InvalidArgument, "latent has non-finite entries");
}

}  // namespace sdgan

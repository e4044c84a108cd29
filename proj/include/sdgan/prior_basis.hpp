#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdgan/attribute_models.hpp"
#include "sdgan/generator.hpp"
#include "sdgan/latent.hpp"

namespace sdgan {

struct ScoredLatent {
  std::size_t index = 0;
  LatentCode<float> w;
  double conf = 0.0;
};

// Latent i comes from z ~ N(0, I) drawn with derive_seed(seed, i).
VectorX<float> sample_z(int latent_dim, std::uint64_t seed, std::size_t index);

std::vector<ScoredLatent> sample_scored_latents(const GeneratorModel& generator, const AttributePredictor& predictor,
                                                std::size_t n, std::uint64_t seed);

struct LabeledLatents {
  std::vector<VectorX<float>> x;
  std::vector<int> y;  // +1 / -1
  std::vector<std::size_t> source;
};

// One total order (conf descending, index ascending); positives are its head,
// negatives its tail. Throws InsufficientSamples.
LabeledLatents select_extremes(const std::vector<ScoredLatent>& pairs, std::size_t k_pos, std::size_t k_neg);

struct SvmConfig {
  double c = 1.0;
  double tolerance = 1e-3;
  int max_epochs = 2000;
  double bias_feature = 1.0;
};

struct BoundaryFit {
  SemanticBasis basis;
  double train_accuracy = 0.0;
  int epochs = 0;
  double violation = 0.0;
  double primal = 0.0;
  double dual = 0.0;
};

// Soft-margin linear SVM (hinge + L2) by dual coordinate descent over a fixed
// cyclic order. Features are centred and carry a constant bias coordinate.
// Throws SingleClass, NonConvergence.
BoundaryFit fit_boundary(const LabeledLatents& data, const SvmConfig& config = {}, const std::string& attribute_id = "");

double signed_distance(const SemanticBasis& basis, const VectorX<float>& w);

enum class MaskedReduction { Mean, Sum };

struct ScoreBreakdown {
  double eta = 0.0;
  double det_term = 0.0;
  double inside_term = 0.0;
  double outside_term = 0.0;
  double total = 0.0;
  double lambda = 10.0;

  double recompose() const { return det_term + lambda * inside_term - lambda * outside_term; }
  nlohmann::json to_json() const;
  static ScoreBreakdown from_json(const nlohmann::json& j);
};

// Squared difference of two (C,H,W) tensors reduced inside and outside M.
std::pair<double, double> masked_terms(const Tensor<float>& a, const Tensor<float>& b, const RegionMask& mask,
                                       MaskedReduction reduction = MaskedReduction::Mean);

ScoreBreakdown make_breakdown(double eta, double det, double inside, double outside, double lambda);

struct GridSpec {
  double lo = 0.0;
  double hi = 10.0;
  double step = 0.2;

  std::size_t count() const;
  double at(std::size_t k) const { return lo + static_cast<double>(k) * step; }
  std::vector<double> points() const;
  std::string to_string() const;
  static GridSpec parse(const std::string& text);  // "lo:hi:step"
};

// Caches G_s(w) and M so each grid point costs one synthesis and one
// detector call.
class EditScorer {
 public:
  EditScorer(const GeneratorModel& generator, const AttributePredictor& detector, const LatentCode<float>& w,
             const VectorX<float>& direction, const RegionMask& mask, double lambda = 10.0,
             MaskedReduction reduction = MaskedReduction::Mean);

  ScoreBreakdown operator()(double eta) const;
  const ImageTensor& base_image() const { return base_; }

 private:
  const GeneratorModel& generator_;
  const AttributePredictor& detector_;
  LatentCode<float> w_;
  VectorX<float> direction_;
  RegionMask mask_;
  double lambda_;
  MaskedReduction reduction_;
  ImageTensor base_;
};

ScoreBreakdown score_edit(const GeneratorModel& generator, const AttributePredictor& detector,
                          const LatentCode<float>& w, const VectorX<float>& direction, double eta,
                          const RegionMask& mask, double lambda = 10.0,
                          MaskedReduction reduction = MaskedReduction::Mean);

using ScoreFn = std::function<ScoreBreakdown(double eta)>;

struct LengthSearch {
  double eta_m = 0.0;
  SemanticBasis basis;
  std::vector<ScoreBreakdown> breakdowns;
};

// Exhaustive grid argmax of total; ties go to the smallest eta.
std::size_t argmax_total(const std::vector<ScoreBreakdown>& breakdowns);
LengthSearch search_optimal_length(const ScoreFn& score, const SemanticBasis& direction, const GridSpec& grid = {});
LengthSearch search_optimal_length(const GeneratorModel& generator, const AttributePredictor& detector,
                                   const LatentCode<float>& w, const SemanticBasis& direction, const RegionMask& mask,
                                   const GridSpec& grid = {}, double lambda = 10.0);

// One eta for the whole attribute: argmax of the mean total over latents.
LengthSearch search_global_length(const std::vector<ScoreFn>& scores, const SemanticBasis& direction,
                                  const GridSpec& grid = {});

enum class RegionMode { Footprint, WholeFace };

struct FaceGeometry {
  double face_scale = 0.85;
  double pose_shift = 0.0;
  double eye_spacing = 0.3;
  double silhouette_iou = 0.0;
};

// Face placement read back off a generated image: scale and pose by matching
// the face-ellipse silhouette, eye spacing by dark-spot correlation along the
// eye line. Throws PlacementFailure when the silhouette match is poor.
FaceGeometry estimate_face_geometry(const ImageTensor& image);

// Full base-face spec for an image with no known z: placement as above, then
// hue and brightness by a coarse-to-fine fit of the rendered base face.
// Accessories are not estimated.
sprite::FaceSpec estimate_face_spec(const ImageTensor& image);

// Accessory footprint at the placement estimated from the image, grown by one
// pixel; WholeFace gives the face ellipse instead.
RegionMask attribute_region_mask(const GeneratorModel& generator, const LatentCode<float>& w,
                                 const std::string& attribute_id, RegionMode mode = RegionMode::Footprint);
RegionMask attribute_region_mask(const ImageTensor& image, const std::string& attribute_id,
                                 RegionMode mode = RegionMode::Footprint);

struct BasisLearnConfig {
  std::size_t samples = 20000;
  std::size_t k_pos = 500;
  std::size_t k_neg = 500;
  std::uint64_t seed = 21;
  SvmConfig svm;
};

struct BasisLearnResult {
  BoundaryFit fit;
  std::vector<ScoredLatent> scored;
};

BasisLearnResult learn_basis(const GeneratorModel& generator, const AttributePredictor& predictor,
                             const BasisLearnConfig& config);

// Direction as a tensor file plus a JSON sidecar (path + ".json") holding
// attribute_id, eta_m, lambda, grid and the boundary bias.
void save_basis(const std::filesystem::path& path, const SemanticBasis& basis, const nlohmann::json& extra = {});
SemanticBasis load_basis(const std::filesystem::path& path, nlohmann::json* sidecar = nullptr);

}  // namespace sdgan

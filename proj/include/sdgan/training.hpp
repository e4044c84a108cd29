#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdgan/attribute_models.hpp"
#include "sdgan/fusion.hpp"
#include "sdgan/generator.hpp"
#include "sdgan/prior_basis.hpp"

namespace sdgan {

// Fixed, randomly initialised conv stack used as the perceptual feature net.
// Stage i is conv(widths[i], stride strides[i]) followed by leaky ReLU.
template <typename Scalar>
class FeatureNet {
 public:
  using G = nn::Graph<Scalar>;
  using V = nn::Var<Scalar>;

  FeatureNet() = default;
  FeatureNet(std::vector<int> widths, std::vector<int> strides, std::uint64_t seed, int kernel = 3)
      : widths_(std::move(widths)), strides_(std::move(strides)), kernel_(kernel) {
    require(!widths_.empty() && widths_.size() == strides_.size(), ErrorKind::InvalidArgument,
            "feature net widths and strides must pair up");
    std::mt19937_64 rng(seed);
    int in = 3;
    for (std::size_t i = 0; i < widths_.size(); ++i) {
      nn::add_conv(params_, "feat." + std::to_string(i), in, widths_[i], kernel_, rng);
      in = widths_[i];
    }
    params_.set_trainable(false);
  }

  static FeatureNet standard(std::uint64_t seed = 41) { return FeatureNet({8, 16, 32}, {1, 2, 2}, seed); }

  nn::ParamSet<Scalar>& params() { return params_; }
  const nn::ParamSet<Scalar>& params() const { return params_; }
  std::size_t stages() const { return widths_.size(); }

  std::vector<V> features(G& g, V image) const {
    std::vector<V> out;
    V h = image;
    for (std::size_t i = 0; i < widths_.size(); ++i) {
      h = nn::leaky_relu(nn::apply_conv(g, params_, "feat." + std::to_string(i), h, strides_[i], kernel_ / 2));
      out.push_back(h);
    }
    return out;
  }

  // Mean over stages of the per-pixel squared distance between
  // channel-normalised activations, averaged over pixels.
  V distance(G& g, V a, V b) const {
    const auto fa = features(g, a);
    const auto fb = features(g, b);
    V acc = stage_distance(fa[0], fb[0]);
    for (std::size_t i = 1; i < fa.size(); ++i) acc = acc + stage_distance(fa[i], fb[i]);
    return nn::scale(acc, Scalar(1) / static_cast<Scalar>(fa.size()));
  }

  template <typename Other>
  FeatureNet<Other> cast() const {
    FeatureNet<Other> out;
    out.widths_ = widths_;
    out.strides_ = strides_;
    out.kernel_ = kernel_;
    out.params_ = params_.template cast<Other>();
    return out;
  }

  nlohmann::json describe() const { return {{"widths", widths_}, {"strides", strides_}, {"kernel", kernel_}}; }

 private:
  template <typename>
  friend class FeatureNet;

  static V stage_distance(V fa, V fb) {
    const int c = fa.shape()[0];
    V d = nn::square(nn::channel_normalize(fa) - nn::channel_normalize(fb));
    // sum over channels, mean over pixels == mean over all entries times C
    return nn::scale(nn::mean(d), static_cast<Scalar>(c));
  }

  std::vector<int> widths_;
  std::vector<int> strides_;
  int kernel_ = 3;
  nn::ParamSet<Scalar> params_;
};

using PerceptualNet = FeatureNet<float>;

double loss_content(const ImageTensor& pred, const ImageTensor& gt);
double loss_perceptual(const PerceptualNet& net, const ImageTensor& pred, const ImageTensor& gt);
double loss_class(const AttributePredictor& detector, const ImageTensor& pred);
double total_loss(double l_mse, double l_f, double l_c, double lambda1, double lambda2);

struct TrainingConfig {
  int epochs = 30;
  int batch_size = 10;
  double lr = 0.01;
  double lr_decay = 0.8;
  int decay_every = 5;
  double lambda1 = 0.8;
  double lambda2 = 0.5;
  std::uint64_t seed = 51;
  std::string optimizer = "adam";

  void validate() const;
  double learning_rate(int epoch) const;
  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& j);
};

struct LossReport {
  double l_mse = 0.0;
  double l_f = 0.0;
  double l_c = 0.0;
  double l_all = 0.0;
  int epoch = 0;
  int step = 0;
  double lr = 0.0;

  nlohmann::json to_json() const;
};

struct FusionSample {
  VectorX<float> z;
  LatentCode<float> w;
  sprite::FaceSpec spec;
  ImageTensor face_image;  // I_f = G_s(w)
  ImageTensor gt;          // I_gt
  sprite::ShapeMaps maps;
  RegionMask region;
  SemanticBasis basis;  // direction with this image's searched length
  std::vector<ScoreBreakdown> breakdowns;
};

struct FusionDataset {
  std::string attribute_id;
  ImageTensor attribute_image;  // I_m
  std::vector<FusionSample> samples;
};

enum class EtaMode { PerImage, Global, Disabled };

struct FusionDataConfig {
  std::size_t samples = 400;
  std::uint64_t seed = 61;
  GridSpec grid;
  double lambda = 10.0;
  EtaMode eta_mode = EtaMode::PerImage;
  RegionMode region_mode = RegionMode::Footprint;
};

// Paired training data: latents whose planted flags say "no accessory",
// their generated faces, the accessory composited onto them at the planted
// placement (I_gt), rendered shape maps, and the searched basis length.
FusionDataset build_fusion_dataset(const GeneratorModel& generator, const AttributePredictor& detector,
                                   const SemanticBasis& direction, const std::string& attribute_id,
                                   const FusionDataConfig& config);

template <typename Scalar>
struct LossVars {
  nn::Var<Scalar> image, mse, perceptual, cls, all;
};

// Differentiable L_all for one sample. `attr` is the shared attribute feature.
template <typename Scalar>
LossVars<Scalar> edit_losses(nn::Graph<Scalar>& g, const StyleGenerator<Scalar>& generator,
                             const FusionModel<Scalar>& fusion, const AttributeModel<Scalar>& detector,
                             const FeatureNet<Scalar>& features, const FeatureMap<Scalar>& attr,
                             const Tensor<Scalar>& w, const Tensor<Scalar>& n_b, const Tensor<Scalar>& face_image,
                             const Tensor<Scalar>& maps, const Tensor<Scalar>& gt, Scalar lambda1, Scalar lambda2) {
  const int layers = generator.config().layers;
  const auto labels = single_region_labels(fusion.config().resolution, fusion.config().resolution);
  auto n_o = fusion.offset(g, attr, g.input(face_image), g.input(maps), labels);
  auto base = nn::broadcast_rows(g.input(w), layers) + nn::broadcast_rows(g.input(n_b), layers);
  auto pred = generator.synthesize(g, base + n_o);
  auto target = g.input(gt);
  LossVars<Scalar> out{pred, nn::mse(pred, target), features.distance(g, pred, target),
                       nn::add_constant(nn::scale(detector.confidence(g, pred), Scalar(-1)), Scalar(1)), {}};
  out.all = out.mse + nn::scale(out.perceptual, lambda1) + nn::scale(out.cls, lambda2);
  return out;
}

struct TrainResult {
  std::vector<LossReport> series;
  std::vector<std::string> dead_parameters;  // no gradient on the first batch
  std::uint64_t generator_fingerprint_before = 0;
  std::uint64_t generator_fingerprint_after = 0;
};

using StepLogger = std::function<void(const LossReport&)>;

// One JSON object per line.
StepLogger ndjson_logger(std::ostream& out);

// Adam on the fusion parameters, lr * decay^floor(epoch / decay_every); one
// graph per batch, batch order a pure function of (seed, epoch). Throws
// EmptyDataset, DivergenceDetected (nothing is written then).
TrainResult train_fusion(const GeneratorModel& generator, Fusion& fusion, const AttributePredictor& detector,
                         const FusionDataset& data, const TrainingConfig& config, const StepLogger& log = {},
                         const PerceptualNet& features = PerceptualNet::standard());

// Writes the checkpoint with the training config in config_snapshot.
void save_trained_fusion(const Fusion& fusion, const std::filesystem::path& dir, const TrainingConfig& config,
                         const nlohmann::json& extra = {});

}  // namespace sdgan

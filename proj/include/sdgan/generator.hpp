#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdgan/image.hpp"
#include "sdgan/latent.hpp"
#include "sdgan/nn.hpp"
#include "sdgan/sprite.hpp"
#include "sdgan/tensor_file.hpp"

namespace sdgan {

struct GeneratorConfig {
  int latent_dim = 64;  // d
  int layers = 8;       // L, style rows consumed by synthesis
  int resolution = 32;
  int channels = 32;      // feature width up to 16x16
  int top_channels = 16;  // feature width above 16x16
  int mapping_layers = 3;

  void validate() const;
  int blocks() const;  // number of 2x upsampling stages from 4x4
  int channels_at(int res) const { return res <= 16 ? channels : top_channels; }
  // Convolutions per upsampling stage (the first conv at 4x4 and toRGB excluded).
  std::vector<int> convs_per_block() const;

  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

// Toy style-based generator. Mapping: affine/SiLU stack Z -> W. Synthesis: a
// learned 4x4 constant driven through style-modulated, demodulated 3x3 convs
// with nearest 2x upsampling; row i of the W+ code modulates layer i and the
// last row modulates the 1x1 RGB head, which ends in a sigmoid.
template <typename Scalar>
class StyleGenerator {
 public:
  using G = nn::Graph<Scalar>;
  using V = nn::Var<Scalar>;

  StyleGenerator() = default;
  StyleGenerator(const GeneratorConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const int d = config_.latent_dim;
    for (int i = 0; i < config_.mapping_layers; ++i) nn::add_linear(params_, "map." + std::to_string(i), d, d, rng, 1.0);

    params_.add("syn.const", nn::uniform_init<Scalar>({config_.channels_at(4), 4, 4}, 1.0, rng));
    int res = 4, layer = 0;
    int in_c = config_.channels_at(4);
    add_modconv(layer++, in_c, in_c, 3, rng);
    for (int convs : config_.convs_per_block()) {
      res *= 2;
      const int out_c = config_.channels_at(res);
      for (int k = 0; k < convs; ++k) {
        add_modconv(layer++, in_c, out_c, 3, rng);
        in_c = out_c;
      }
    }
    add_modconv(layer, in_c, 3, 1, rng);
  }

  const GeneratorConfig& config() const { return config_; }
  nn::ParamSet<Scalar>& params() { return params_; }
  const nn::ParamSet<Scalar>& params() const { return params_; }

  bool frozen() const { return frozen_; }
  void freeze() {
    frozen_ = true;
    params_.set_trainable(false);
  }

  template <typename Other>
  StyleGenerator<Other> cast() const {
    StyleGenerator<Other> out;
    out.config_ = config_;
    out.params_ = params_.template cast<Other>();
    out.frozen_ = frozen_;
    return out;
  }

  V map(G& g, V z) const {
    require(z.size() == config_.latent_dim, ErrorKind::DimensionMismatch,
            "z has " + std::to_string(z.size()) + " entries, expected " + std::to_string(config_.latent_dim));
    V h = z;
    for (int i = 0; i < config_.mapping_layers; ++i) {
      h = nn::apply_linear(g, params_, "map." + std::to_string(i), h);
      if (i + 1 < config_.mapping_layers) h = nn::silu(h);
    }
    return h;
  }

  // styles: (L, d) -> image (3, R, R)
  V synthesize(G& g, V styles) const {
    require(styles.value().rank() == 2 && styles.shape()[0] == config_.layers &&
                styles.shape()[1] == config_.latent_dim,
            ErrorKind::DimensionMismatch,
            "styles " + shape_string(styles.shape()) + ", expected [" + std::to_string(config_.layers) + "," +
                std::to_string(config_.latent_dim) + "]");
    V x = g.param(params_["syn.const"]);
    int layer = 0;
    x = nn::leaky_relu(modconv(g, layer, x, nn::row(styles, layer), 1, true));
    ++layer;
    for (int convs : config_.convs_per_block()) {
      x = nn::upsample2x(x);
      for (int k = 0; k < convs; ++k, ++layer) x = nn::leaky_relu(modconv(g, layer, x, nn::row(styles, layer), 1, true));
    }
    return nn::sigmoid(modconv(g, layer, x, nn::row(styles, layer), 0, false));
  }

  V synthesize_w(G& g, V w) const { return synthesize(g, nn::broadcast_rows(w, config_.layers)); }

  // Convenience paths with no gradient recording.
  LatentCode<Scalar> map_latent(const LatentCode<Scalar>& z) const {
    require(z.space == LatentSpace::Z, ErrorKind::InvalidArgument, "map_latent expects a Z-space code");
    G g(false);
    auto w = map(g, g.input(Tensor<Scalar>({static_cast<int>(z.dim())}, z.values)));
    return {w.value().data(), LatentSpace::W};
  }

  Tensor<Scalar> synthesize(const ExtendedLatent<Scalar>& styles) const {
    G g(false);
    Tensor<Scalar> t({static_cast<int>(styles.rows()), static_cast<int>(styles.cols())});
    t.matrix(styles.rows(), styles.cols()) = styles;
    return synthesize(g, g.input(std::move(t))).value();
  }

  Tensor<Scalar> synthesize(const LatentCode<Scalar>& w) const {
    return synthesize(broadcast_to_extended(w, config_.layers));
  }

 private:
  template <typename>
  friend class StyleGenerator;

  void add_modconv(int layer, int in_c, int out_c, int k, std::mt19937_64& rng) {
    const std::string p = "syn." + std::to_string(layer);
    params_.add(p + ".affine.weight", nn::fan_in_init<Scalar>({in_c, config_.latent_dim}, config_.latent_dim, rng, 0.5));
    params_.add(p + ".affine.bias", Tensor<Scalar>::constant({in_c}, Scalar(1)));
    params_.add(p + ".conv.weight", nn::fan_in_init<Scalar>({out_c, in_c, k, k}, in_c * k * k, rng, std::sqrt(2.0)));
    params_.add(p + ".conv.bias", Tensor<Scalar>({out_c}));
  }

  V modconv(G& g, int layer, V x, V style_row, int pad, bool demodulate) const {
    const std::string p = "syn." + std::to_string(layer);
    V s = nn::apply_linear(g, params_, p + ".affine", style_row);
    V w = g.param(params_[p + ".conv.weight"]);
    V y = nn::conv2d(nn::channel_scale(x, s), w, static_cast<const V*>(nullptr), 1, pad);
    if (demodulate) {
      V demod = nn::rsqrt(nn::linear(nn::square(s), nn::kernel_square_sum(w)), Scalar(1e-8));
      y = nn::channel_scale(y, demod);
    }
    return nn::add_channel_bias(y, g.param(params_[p + ".conv.bias"]));
  }

  GeneratorConfig config_;
  nn::ParamSet<Scalar> params_;
  bool frozen_ = false;
};

using GeneratorModel = StyleGenerator<float>;

// Small convolutional critic used by the adversarial term of pre-training.
template <typename Scalar>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(int resolution, std::uint64_t seed) : resolution_(resolution) {
    std::mt19937_64 rng(seed);
    nn::add_conv(params_, "d.0", 3, 16, 3, rng);
    nn::add_conv(params_, "d.1", 16, 32, 3, rng);
    nn::add_conv(params_, "d.2", 32, 32, 3, rng);
    const int r = resolution / 8;
    nn::add_linear(params_, "d.out", 32 * r * r, 1, rng, 1.0);
  }

  nn::ParamSet<Scalar>& params() { return params_; }

  nn::Var<Scalar> logit(nn::Graph<Scalar>& g, nn::Var<Scalar> image) const {
    auto h = nn::leaky_relu(nn::apply_conv(g, params_, "d.0", image, 2, 1));
    h = nn::leaky_relu(nn::apply_conv(g, params_, "d.1", h, 2, 1));
    h = nn::leaky_relu(nn::apply_conv(g, params_, "d.2", h, 2, 1));
    return nn::apply_linear(g, params_, "d.out", nn::reshape(h, {static_cast<int>(h.size())}));
  }

 private:
  int resolution_ = 32;
  nn::ParamSet<Scalar> params_;
};

// The sprite world's latent layout: the leading Z coordinates carry the face
// parameters (through the normal CDF onto their ranges) and one presence flag
// per accessory; the rest are nuisance coordinates the generator learns to
// ignore. Accessories that co-occur are composited in canonical order.
struct LatentPlan {
  static constexpr int kPlantedDims = 8;
  static constexpr int kHue = 0, kScale = 1, kEyeSpacing = 2, kPose = 3, kBrightness = 4;
  static constexpr int kMaskFlag = 5, kFrameFlag = 6, kSunFlag = 7;
  static constexpr double kPresenceThreshold = 0.5;

  static sprite::FaceSpec decode(const VectorX<float>& z);
  // z whose decode reproduces `spec`; flag and nuisance coordinates are drawn
  // from the standard normal conditioned on the spec.
  static VectorX<float> encode(const sprite::FaceSpec& spec, int latent_dim, std::mt19937_64& rng);
  // Standard-normal z conditioned on decoding to exactly `attributes`.
  static VectorX<float> sample_with_attributes(const std::set<std::string>& attributes, int latent_dim,
                                               std::mt19937_64& rng);
};

VectorX<float> standard_normal(int n, std::mt19937_64& rng);
double normal_cdf(double x);
double normal_quantile(double p);

struct GeneratorTrainConfig {
  int steps = 2500;
  int batch_size = 16;
  double lr = 2e-3;
  double adversarial_weight = 0.0;
  // Chance of compositing each extra accessory onto a training image.
  double co_occurrence = 0.3;
  double disc_lr = 1e-3;
  std::uint64_t seed = 1;
  int log_every = 100;
};

struct GeneratorTrainResult {
  GeneratorModel model;
  std::vector<double> loss_series;
};

// Pre-trains the generator on sprite images. Datasets with face specs use the
// planted latent layout (reconstruction against the rendered image, plus an
// optional non-saturating adversarial term); the returned model is frozen.
// Throws EmptyDataset, DivergenceDetected.
GeneratorTrainResult train_generator(const sprite::Dataset& dataset, const GeneratorConfig& config,
                                     const GeneratorTrainConfig& train,
                                     const std::function<void(int, double)>& progress = {});

void save_generator(const GeneratorModel& model, const std::filesystem::path& dir, const nlohmann::json& extra = {});

// Loads a generator checkpoint (ours or an externally exported one in the same
// tensor format) and freezes it. Throws FormatError, DimensionMismatch.
GeneratorModel load_generator(const std::filesystem::path& dir, const std::optional<GeneratorConfig>& expected = {});

}  // namespace sdgan

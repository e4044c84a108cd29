#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdgan/generator.hpp"
#include "sdgan/latent.hpp"
#include "sdgan/nn.hpp"
#include "sdgan/sprite.hpp"

namespace sdgan {

enum class FeatureRole { Face, Attribute, Style, Fused };

std::string to_string(FeatureRole role);

template <typename Scalar>
struct FeatureMap {
  nn::Var<Scalar> value;
  FeatureRole role;
};

struct FusionConfig {
  int resolution = 32;
  int latent_dim = 64;
  int layers = 8;
  int face_channels = 64;
  int attribute_channels = 64;
  int residual_blocks = 4;
  std::vector<int> style_widths = {32, 64};
  std::vector<int> style_strides = {2, 2};
  int regions = 1;
  int regressor_hidden = 64;
  double regressor_out_gain = 0.1;
  double offset_scale = 0.05;  // fixed multiplier on the regressor output
  // Parameters are stored divided by this and rescaled in the forward pass,
  // so the optimizer's step is lr * lr_multiplier in weight units.
  double lr_multiplier = 0.1;

  void validate() const;
  int feature_size() const { return resolution / 4; }  // spatial side of face / attribute / fused maps
  int style_stride() const;
  int style_channels() const { return style_widths.back(); }

  nlohmann::json to_json() const;
  static FusionConfig from_json(const nlohmann::json& j);
};

// Per-pixel region labels at the style encoder's input resolution. The
// single-region default labels every pixel 0.
std::vector<int> single_region_labels(int height, int width);
std::vector<int> downsample_labels(const std::vector<int>& labels, int height, int width, int stride);

// f_m: face, attribute and style encoders, the alpha-weighted modulation
// fusion, and the block-diagonal regressor onto W+.
template <typename Scalar>
class FusionModel {
 public:
  using G = nn::Graph<Scalar>;
  using V = nn::Var<Scalar>;
  using FM = FeatureMap<Scalar>;

  FusionModel() = default;
  FusionModel(const FusionConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    auto& ps = params_;
    const int fc = config_.face_channels, ac = config_.attribute_channels;
    nn::add_conv(ps, "face.0", 3, 32, 3, rng);
    nn::add_conv(ps, "face.1", 32, fc, 3, rng);
    nn::add_conv(ps, "face.2", fc, fc, 3, rng);

    nn::add_conv(ps, "attr.stem.0", 3, 32, 3, rng);
    nn::add_conv(ps, "attr.stem.1", 32, ac, 3, rng);
    for (int b = 0; b < config_.residual_blocks; ++b) {
      nn::add_conv(ps, "attr.res" + std::to_string(b) + ".0", ac, ac, 3, rng);
      nn::add_conv(ps, "attr.res" + std::to_string(b) + ".1", ac, ac, 3, rng, 0.5);
    }

    int in = 9;
    for (std::size_t i = 0; i < config_.style_widths.size(); ++i) {
      nn::add_conv(ps, "style." + std::to_string(i), in, config_.style_widths[i], 3, rng);
      in = config_.style_widths[i];
    }

    nn::add_conv(ps, "fuse.face", fc, 2 * ac, 3, rng, 0.5);
    nn::add_conv(ps, "fuse.style", config_.style_channels(), 2 * ac, 1, rng, 0.5);
    ps.add("fuse.alpha1", Tensor<Scalar>::constant({1}, Scalar(1)));
    ps.add("fuse.alpha2", Tensor<Scalar>::constant({1}, Scalar(1)));

    const int group = group_size();
    for (int l = 0; l < config_.layers; ++l) {
      const std::string p = "reg." + std::to_string(l);
      nn::add_linear(ps, p + ".0", group, config_.regressor_hidden, rng);
      nn::add_linear(ps, p + ".1", config_.regressor_hidden, config_.latent_dim, rng, config_.regressor_out_gain);
    }
    const auto inv = static_cast<Scalar>(1.0 / config_.lr_multiplier);
    for (auto& p : ps.all()) p.value.data() *= inv;
  }

  const FusionConfig& config() const { return config_; }
  nn::ParamSet<Scalar>& params() { return params_; }
  const nn::ParamSet<Scalar>& params() const { return params_; }

  int group_size() const {
    const int s = config_.feature_size();
    const int flat = config_.attribute_channels * s * s;
    require(flat % config_.layers == 0, ErrorKind::InvalidArgument,
            "fused feature size " + std::to_string(flat) + " does not split into " + std::to_string(config_.layers) +
                " groups");
    return flat / config_.layers;
  }

  template <typename Other>
  FusionModel<Other> cast() const {
    FusionModel<Other> out;
    out.config_ = config_;
    out.params_ = params_.template cast<Other>();
    return out;
  }

  FM encode_face(G& g, V image) const {
    check_input(image, 3, "face image");
    V h = nn::leaky_relu(conv(g, "face.0", image, 1, 1));
    h = nn::leaky_relu(conv(g, "face.1", h, 2, 1));
    h = nn::leaky_relu(conv(g, "face.2", h, 2, 1));
    return {h, FeatureRole::Face};
  }

  FM encode_attribute(G& g, V image) const {
    check_input(image, 3, "attribute image");
    V h = nn::leaky_relu(conv(g, "attr.stem.0", image, 2, 1));
    h = nn::leaky_relu(conv(g, "attr.stem.1", h, 2, 1));
    for (int b = 0; b < config_.residual_blocks; ++b) {
      const std::string p = "attr.res" + std::to_string(b);
      V r = nn::leaky_relu(conv(g, p + ".0", h, 1, 1));
      r = conv(g, p + ".1", r, 1, 1);
      h = nn::leaky_relu(h + r);
    }
    return {h, FeatureRole::Attribute};
  }

  // maps: (9,H,W) normal/diffuse/albedo; labels: per-pixel region ids at H x W.
  FM encode_style(G& g, V maps, const std::vector<int>& labels) const {
    check_input(maps, 9, "shape maps");
    V h = maps;
    for (std::size_t i = 0; i < config_.style_widths.size(); ++i)
      h = nn::leaky_relu(conv(g, "style." + std::to_string(i), h, config_.style_strides[i], 1));
    const auto pooled_labels = downsample_labels(labels, config_.resolution, config_.resolution, config_.style_stride());
    return {nn::region_average_pool(h, pooled_labels, config_.regions), FeatureRole::Style};
  }

  FM encode_style(G& g, V maps) const {
    return encode_style(g, maps, single_region_labels(config_.resolution, config_.resolution));
  }

  // fused = x + a1 (gf * x + bf) + a2 (gs * x + bs), x the attribute feature;
  // the face path predicts (gf, bf) per pixel, the style path (gs, bs) per
  // region, broadcast over the map.
  FM fuse(G& g, const FM& face, const FM& attr, const FM& style, const std::vector<int>& labels) const {
    require(face.role == FeatureRole::Face && attr.role == FeatureRole::Attribute && style.role == FeatureRole::Style,
            ErrorKind::RoleMismatch,
            "fuse expects (face, attribute, style), got (" + to_string(face.role) + ", " + to_string(attr.role) +
                ", " + to_string(style.role) + ")");
    const int ac = config_.attribute_channels, s = config_.feature_size();
    const Shape fmap{ac, s, s};
    require(attr.value.shape() == fmap && face.value.shape() == Shape{config_.face_channels, s, s},
            ErrorKind::ShapeMismatch, "face/attribute features must be " + shape_string(fmap));
    const V x = attr.value;
    const Eigen::Index n = static_cast<Eigen::Index>(ac) * s * s;

    V fp = conv(g, "fuse.face", face.value, 1, 1);
    V face_mod = nn::reshape(nn::slice(fp, 0, n), fmap) * x + nn::reshape(nn::slice(fp, n, n), fmap);

    V sp = conv(g, "fuse.style", style.value, 1, 0);  // (2ac, R, 1)
    V sp_map = nn::region_broadcast(sp, downsample_labels(labels, config_.resolution, config_.resolution, 4), s, s);
    V style_mod = nn::reshape(nn::slice(sp_map, 0, n), fmap) * x + nn::reshape(nn::slice(sp_map, n, n), fmap);

    V a1 = param(g, "fuse.alpha1");
    V a2 = param(g, "fuse.alpha2");
    return {x + nn::scale_by(face_mod, a1) + nn::scale_by(style_mod, a2), FeatureRole::Fused};
  }

  FM fuse(G& g, const FM& face, const FM& attr, const FM& style) const {
    return fuse(g, face, attr, style, single_region_labels(config_.resolution, config_.resolution));
  }

  // Block-diagonal: flattened group l feeds only row l of the L x d offset.
  V regress_offset(G& g, const FM& fused) const {
    require(fused.role == FeatureRole::Fused, ErrorKind::RoleMismatch, "regressor expects a fused feature");
    const int s = config_.feature_size();
    require(fused.value.shape() == Shape{config_.attribute_channels, s, s}, ErrorKind::ShapeMismatch,
            "fused feature must be " + shape_string({config_.attribute_channels, s, s}) + ", got " +
                shape_string(fused.value.shape()));
    const int group = group_size();
    std::vector<V> rows;
    rows.reserve(static_cast<std::size_t>(config_.layers));
    for (int l = 0; l < config_.layers; ++l) {
      const std::string p = "reg." + std::to_string(l);
      V h = nn::slice(fused.value, static_cast<Eigen::Index>(l) * group, group);
      h = nn::silu(linear(g, p + ".0", h));
      rows.push_back(linear(g, p + ".1", h));
    }
    return nn::scale(nn::reshape(nn::concat(rows), {config_.layers, config_.latent_dim}),
                     static_cast<Scalar>(config_.offset_scale));
  }

  // n_o = f_m(I_f, I_m) given the shape maps.
  V offset(G& g, V face_image, V attribute_image, V maps) const {
    const auto labels = single_region_labels(config_.resolution, config_.resolution);
    return offset(g, encode_attribute(g, attribute_image), face_image, maps, labels);
  }

  // Variant reusing an attribute feature shared across a batch.
  V offset(G& g, const FM& attr, V face_image, V maps, const std::vector<int>& labels) const {
    const FM face = encode_face(g, face_image);
    const FM style = encode_style(g, maps, labels);
    return regress_offset(g, fuse(g, face, attr, style, labels));
  }

 private:
  template <typename>
  friend class FusionModel;

  V param(G& g, const std::string& name) const {
    return nn::scale(g.param(params_[name]), static_cast<Scalar>(config_.lr_multiplier));
  }

  V conv(G& g, const std::string& name, V x, int stride, int pad) const {
    V b = param(g, name + ".bias");
    return nn::conv2d(x, param(g, name + ".weight"), &b, stride, pad);
  }

  V linear(G& g, const std::string& name, V x) const {
    V b = param(g, name + ".bias");
    return nn::linear(x, param(g, name + ".weight"), &b);
  }

  void check_input(V x, int channels, const char* what) const {
    require(x.value().rank() == 3 && x.shape()[0] == channels, ErrorKind::ShapeMismatch,
            std::string(what) + " must have " + std::to_string(channels) + " channels, got " + shape_string(x.shape()));
    require(x.shape()[1] == config_.resolution && x.shape()[2] == config_.resolution, ErrorKind::ResolutionMismatch,
            std::string(what) + " is " + std::to_string(x.shape()[1]) + "x" + std::to_string(x.shape()[2]) +
                ", expected " + std::to_string(config_.resolution));
  }

  FusionConfig config_;
  nn::ParamSet<Scalar> params_;
};

using Fusion = FusionModel<float>;

struct EditOutput {
  ImageTensor image;
  ExtendedLatent<float> n_o;
  ExtendedLatent<float> n_a;
};

// I_pred = G_s(w + n_o + n_b). The generator is only read.
EditOutput forward_edit(const GeneratorModel& generator, const Fusion& fusion, const SemanticBasis& basis,
                        const LatentCode<float>& w, const ImageTensor& face_image, const ImageTensor& attribute_image,
                        const sprite::ShapeMaps& maps);

ExtendedLatent<float> predict_offset(const Fusion& fusion, const ImageTensor& face_image,
                                     const ImageTensor& attribute_image, const sprite::ShapeMaps& maps);

// Identity pre-training of the face trunk: a classifier over quantized
// (hue, eye_spacing) buckets whose conv weights are copied into face.*.
struct IdentityPretrainConfig {
  int epochs = 3;
  int batch_size = 16;
  double lr = 2e-3;
  int hue_buckets = 4;
  int eye_buckets = 3;
  std::uint64_t seed = 31;
};

struct IdentityPretrainResult {
  double train_accuracy = 0.0;
  int classes = 0;
};

int identity_bucket(const sprite::FaceSpec& spec, const IdentityPretrainConfig& config);

IdentityPretrainResult pretrain_face_encoder(Fusion& fusion, const sprite::Dataset& dataset,
                                             const IdentityPretrainConfig& config = {});

void save_fusion(const Fusion& fusion, const std::filesystem::path& dir, const nlohmann::json& extra = {});
Fusion load_fusion(const std::filesystem::path& dir, nlohmann::json* config_snapshot = nullptr);

}  // namespace sdgan

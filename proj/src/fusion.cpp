#include "sdgan/fusion.hpp"

#include <algorithm>
#include <numeric>

namespace sdgan {

std::string to_string(FeatureRole role) {
  switch (role) {
    case FeatureRole::Face: return "face";
    case FeatureRole::Attribute: return "attribute";
    case FeatureRole::Style: return "style";
    case FeatureRole::Fused: return "fused";
  }
  return "?";
}

void FusionConfig::validate() const {
  require(resolution >= 8 && resolution % 4 == 0, ErrorKind::InvalidArgument, "fusion resolution must be a multiple of 4");
  require(latent_dim > 0 && layers > 0, ErrorKind::InvalidArgument, "latent_dim and layers must be positive");
  require(!style_widths.empty() && style_widths.size() == style_strides.size(), ErrorKind::InvalidArgument,
          "style widths and strides must pair up");
  require(lr_multiplier > 0.0 && offset_scale > 0.0, ErrorKind::InvalidArgument,
          "lr_multiplier and offset_scale must be positive");
  require(regions >= 1, ErrorKind::InvalidArgument, "regions must be at least 1");
  require(resolution % style_stride() == 0, ErrorKind::InvalidArgument, "style strides must divide the resolution");
}

int FusionConfig::style_stride() const {
  return std::accumulate(style_strides.begin(), style_strides.end(), 1, std::multiplies<>());
}

nlohmann::json FusionConfig::to_json() const {
  return {{"resolution", resolution},
          {"latent_dim", latent_dim},
          {"layers", layers},
          {"face_channels", face_channels},
          {"attribute_channels", attribute_channels},
          {"residual_blocks", residual_blocks},
          {"style_widths", style_widths},
          {"style_strides", style_strides},
          {"regions", regions},
          {"regressor_hidden", regressor_hidden},
          {"regressor_out_gain", regressor_out_gain},
          {"offset_scale", offset_scale},
          {"lr_multiplier", lr_multiplier}};
}

FusionConfig FusionConfig::from_json(const nlohmann::json& j) {
  FusionConfig c;
  c.resolution = j.value("resolution", c.resolution);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.layers = j.value("layers", c.layers);
  c.face_channels = j.value("face_channels", c.face_channels);
  c.attribute_channels = j.value("attribute_channels", c.attribute_channels);
  c.residual_blocks = j.value("residual_blocks", c.residual_blocks);
  c.style_widths = j.value("style_widths", c.style_widths);
  c.style_strides = j.value("style_strides", c.style_strides);
  c.regions = j.value("regions", c.regions);
  c.regressor_hidden = j.value("regressor_hidden", c.regressor_hidden);
  c.regressor_out_gain = j.value("regressor_out_gain", c.regressor_out_gain);
  c.offset_scale = j.value("offset_scale", c.offset_scale);
  c.lr_multiplier = j.value("lr_multiplier", c.lr_multiplier);
  return c;
}

std::vector<int> single_region_labels(int height, int width) {
  return std::vector<int>(static_cast<std::size_t>(height) * width, 0);
}

std::vector<int> downsample_labels(const std::vector<int>& labels, int height, int width, int stride) {
  require(static_cast<int>(labels.size()) == height * width, ErrorKind::ShapeMismatch, "region label map size");
  if (stride == 1) return labels;
  const int h = height / stride, w = width / stride;
  std::vector<int> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out[static_cast<std::size_t>(y) * w + x] = labels[static_cast<std::size_t>(y * stride) * width + x * stride];
  return out;
}

ExtendedLatent<float> predict_offset(const Fusion& fusion, const ImageTensor& face_image,
                                     const ImageTensor& attribute_image, const sprite::ShapeMaps& maps) {
  nn::Graph<float> g(false);
  const auto n_o = fusion.offset(g, g.input(face_image), g.input(attribute_image), g.input(maps.stacked()));
  const auto& cfg = fusion.config();
  return n_o.value().matrix(cfg.layers, cfg.latent_dim);
}

EditOutput forward_edit(const GeneratorModel& generator, const Fusion& fusion, const SemanticBasis& basis,
                        const LatentCode<float>& w, const ImageTensor& face_image, const ImageTensor& attribute_image,
                        const sprite::ShapeMaps& maps) {
  check_latent(w, generator.config().latent_dim);
  require(fusion.config().layers == generator.config().layers &&
              fusion.config().latent_dim == generator.config().latent_dim,
          ErrorKind::DimensionMismatch, "fusion model and generator disagree on (L, d)");
  EditOutput out;
  out.n_o = predict_offset(fusion, face_image, attribute_image, maps);
  out.n_a = compose_adjustment(out.n_o, basis);
  out.image = generator.synthesize(apply_edit_latent(w, out.n_a));
  return out;
}

int identity_bucket(const sprite::FaceSpec& spec, const IdentityPretrainConfig& config) {
  const auto bucket = [](double t, int n) { return std::clamp(static_cast<int>(t * n), 0, n - 1); };
  const int h = bucket(sprite::kHueRange.normalize(spec.face_hue), config.hue_buckets);
  const int e = bucket(sprite::kEyeSpacingRange.normalize(spec.eye_spacing), config.eye_buckets);
  return h * config.eye_buckets + e;
}

IdentityPretrainResult pretrain_face_encoder(Fusion& fusion, const sprite::Dataset& dataset,
                                             const IdentityPretrainConfig& config) {
  require(!dataset.samples.empty(), ErrorKind::EmptyDataset, "identity pre-training needs images");
  const int classes = config.hue_buckets * config.eye_buckets;
  const auto& fcfg = fusion.config();

  // Classifier: the model's own face trunk, global average pool, linear head.
  nn::ParamSet<float> head;
  std::mt19937_64 rng(config.seed);
  nn::add_linear(head, "head", fcfg.face_channels, classes, rng, 1.0);
  nn::Adam<float> head_opt({config.lr, 0.9, 0.999, 1e-8});
  nn::Adam<float> trunk_opt({config.lr / fcfg.lr_multiplier, 0.9, 0.999, 1e-8});

  const auto logits = [&](nn::Graph<float>& g, const ImageTensor& img) {
    auto h = fusion.encode_face(g, g.input(img)).value;
    const int s = h.shape()[1] * h.shape()[2];
    auto pooled = nn::region_average_pool(h, std::vector<int>(static_cast<std::size_t>(s), 0), 1);
    return nn::apply_linear(g, head, "head", nn::reshape(pooled, {fcfg.face_channels}));
  };

  std::vector<std::size_t> order(dataset.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t correct = 0, seen = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::mt19937_64 erng(sprite::derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), erng);
    correct = seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      nn::GradBuffer<float> grads;
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = dataset.samples[order[k]];
        const int label = identity_bucket(s.spec, config);
        nn::Graph<float> g;
        auto lg = logits(g, s.image_base);
        Eigen::Index arg = 0;
        lg.value().data().maxCoeff(&arg);
        correct += arg == label;
        ++seen;
        g.backward(nn::softmax_cross_entropy(lg, label));
        grads.add(g.param_grads(), 1.0f / static_cast<float>(end - start));
      }
      if (!grads.all_finite()) fail(ErrorKind::TrainingFailed, "identity pre-training produced non-finite gradients");
      head_opt.step(head, grads);
      trunk_opt.step(fusion.params(), grads);
    }
  }
  return {seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0, classes};
}

void save_fusion(const Fusion& fusion, const std::filesystem::path& dir, const nlohmann::json& extra) {
  nlohmann::json cfg = extra.is_object() ? extra : nlohmann::json::object();
  cfg["fusion"] = fusion.config().to_json();
  write_checkpoint(dir, ModelKind::Fusion, fusion.params().export_tensors(), cfg);
}

Fusion load_fusion(const std::filesystem::path& dir, nlohmann::json* config_snapshot) {
  const Checkpoint ck = read_checkpoint(dir);
  require(ck.manifest.model_kind == ModelKind::Fusion, ErrorKind::FormatError,
          dir.string() + " holds a " + to_string(ck.manifest.model_kind) + " checkpoint, not a fusion model");
  require(ck.manifest.config_snapshot.contains("fusion"), ErrorKind::FormatError,
          dir.string() + ": manifest lacks the fusion config");
  Fusion model(FusionConfig::from_json(ck.manifest.config_snapshot["fusion"]), 0);
  model.params().import_tensors(ck.tensors);
  if (config_snapshot) *config_snapshot = ck.manifest.config_snapshot;
  return model;
}

}  // namespace sdgan

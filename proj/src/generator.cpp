#include "sdgan/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/special_functions/erf.hpp>

namespace sdgan {

void GeneratorConfig::validate() const {
  require(latent_dim >= LatentPlan::kPlantedDims, ErrorKind::InvalidArgument,
          "latent_dim must be at least " + std::to_string(LatentPlan::kPlantedDims));
  require(resolution >= 8 && resolution <= 64 && (resolution & (resolution - 1)) == 0, ErrorKind::InvalidArgument,
          "resolution must be a power of two in [8, 64]");
  require(layers >= 2 + blocks(), ErrorKind::InvalidArgument,
          "layers must be at least " + std::to_string(2 + blocks()) + " at resolution " + std::to_string(resolution));
  require(channels > 0 && top_channels > 0 && mapping_layers > 0, ErrorKind::InvalidArgument,
          "channel and mapping widths must be positive");
}

int GeneratorConfig::blocks() const {
  int b = 0;
  for (int r = 4; r < resolution; r *= 2) ++b;
  return b;
}

std::vector<int> GeneratorConfig::convs_per_block() const {
  const int b = blocks();
  const int convs = layers - 2;
  std::vector<int> out(static_cast<std::size_t>(b), convs / b);
  for (int i = 0; i < convs % b; ++i) ++out[static_cast<std::size_t>(i)];
  return out;
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"latent_dim", latent_dim}, {"layers", layers},         {"resolution", resolution},
          {"channels", channels},     {"top_channels", top_channels}, {"mapping_layers", mapping_layers}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.layers = j.value("layers", c.layers);
  c.resolution = j.value("resolution", c.resolution);
  c.channels = j.value("channels", c.channels);
  c.top_channels = j.value("top_channels", c.top_channels);
  c.mapping_layers = j.value("mapping_layers", c.mapping_layers);
  return c;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_quantile(double p) {
  require(p > 0.0 && p < 1.0, ErrorKind::InvalidArgument, "quantile needs p in (0, 1)");
  return std::sqrt(2.0) * boost::math::erf_inv(2.0 * p - 1.0);
}

VectorX<float> standard_normal(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  VectorX<float> v(n);
  for (int i = 0; i < n; ++i) v[i] = static_cast<float>(nd(rng));
  return v;
}

namespace {

constexpr double kQuantileClip = 1e-4;

double range_value(const sprite::Range& r, float z) { return r.denormalize(normal_cdf(z)); }

float range_code(const sprite::Range& r, double v) {
  return static_cast<float>(normal_quantile(std::clamp(r.normalize(v), kQuantileClip, 1.0 - kQuantileClip)));
}

// Standard normal restricted to (lo, hi) by inverse-CDF sampling.
float truncated_normal(double lo, double hi, std::mt19937_64& rng) {
  const double a = std::isinf(lo) ? 0.0 : normal_cdf(lo);
  const double b = std::isinf(hi) ? 1.0 : normal_cdf(hi);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double p = std::clamp(a + (b - a) * u(rng), 1e-12, 1.0 - 1e-12);
  return static_cast<float>(std::clamp(normal_quantile(p), lo, hi));
}

constexpr double kInf = std::numeric_limits<double>::infinity();

void plant_flags(VectorX<float>& z, const std::set<std::string>& attrs, std::mt19937_64& rng) {
  const double tau = LatentPlan::kPresenceThreshold;
  const bool mask = attrs.count(sprite::kFaceMask) > 0;
  const bool frame = attrs.count(sprite::kFrameGlasses) > 0;
  const bool sun = attrs.count(sprite::kSunGlasses) > 0;
  const auto flag = [&](bool on) { return on ? truncated_normal(tau, kInf, rng) : truncated_normal(-kInf, tau, rng); };
  z[LatentPlan::kMaskFlag] = flag(mask);
  z[LatentPlan::kFrameFlag] = flag(frame);
  z[LatentPlan::kSunFlag] = flag(sun);
}

}  // namespace

sprite::FaceSpec LatentPlan::decode(const VectorX<float>& z) {
  require(z.size() >= kPlantedDims, ErrorKind::DimensionMismatch, "z too short for the latent layout");
  sprite::FaceSpec s;
  s.face_hue = range_value(sprite::kHueRange, z[kHue]);
  s.face_scale = range_value(sprite::kScaleRange, z[kScale]);
  s.eye_spacing = range_value(sprite::kEyeSpacingRange, z[kEyeSpacing]);
  s.pose_shift = range_value(sprite::kPoseRange, z[kPose]);
  s.brightness = range_value(sprite::kBrightnessRange, z[kBrightness]);
  if (z[kMaskFlag] > kPresenceThreshold) s.attributes.insert(sprite::kFaceMask);
  if (z[kFrameFlag] > kPresenceThreshold) s.attributes.insert(sprite::kFrameGlasses);
  if (z[kSunFlag] > kPresenceThreshold) s.attributes.insert(sprite::kSunGlasses);
  return s;
}

VectorX<float> LatentPlan::encode(const sprite::FaceSpec& spec, int latent_dim, std::mt19937_64& rng) {
  require(latent_dim >= kPlantedDims, ErrorKind::DimensionMismatch, "latent_dim too small for the latent layout");
  VectorX<float> z = standard_normal(latent_dim, rng);
  z[kHue] = range_code(sprite::kHueRange, spec.face_hue);
  z[kScale] = range_code(sprite::kScaleRange, spec.face_scale);
  z[kEyeSpacing] = range_code(sprite::kEyeSpacingRange, spec.eye_spacing);
  z[kPose] = range_code(sprite::kPoseRange, spec.pose_shift);
  z[kBrightness] = range_code(sprite::kBrightnessRange, spec.brightness);
  plant_flags(z, spec.attributes, rng);
  return z;
}

VectorX<float> LatentPlan::sample_with_attributes(const std::set<std::string>& attributes, int latent_dim,
                                                  std::mt19937_64& rng) {
  require(latent_dim >= kPlantedDims, ErrorKind::DimensionMismatch, "latent_dim too small for the latent layout");
  for (const auto& a : attributes) sprite::check_discrete_attribute(a);
  VectorX<float> z = standard_normal(latent_dim, rng);
  plant_flags(z, attributes, rng);
  return z;
}

namespace {

using G = nn::Graph<float>;
using V = nn::Var<float>;

void check_finite_step(double loss, const nn::GradBuffer<float>& grads, int step) {
  if (!std::isfinite(loss) || !grads.all_finite())
    fail(ErrorKind::DivergenceDetected, "generator training diverged at step " + std::to_string(step));
}

}  // namespace

GeneratorTrainResult train_generator(const sprite::Dataset& dataset, const GeneratorConfig& config,
                                     const GeneratorTrainConfig& train,
                                     const std::function<void(int, double)>& progress) {
  require(!dataset.samples.empty(), ErrorKind::EmptyDataset, "cannot train a generator on an empty dataset");
  require(dataset.resolution == config.resolution, ErrorKind::ResolutionMismatch,
          "dataset resolution " + std::to_string(dataset.resolution) + " vs generator " +
              std::to_string(config.resolution));
  require(train.steps > 0 && train.batch_size > 0, ErrorKind::InvalidArgument, "steps and batch size must be positive");

  GeneratorTrainResult result{GeneratorModel(config, sprite::derive_seed(train.seed, 0)), {}};
  GeneratorModel& gen = result.model;
  Discriminator<float> disc(config.resolution, sprite::derive_seed(train.seed, 1));
  nn::Adam<float> gen_opt({train.lr, 0.9, 0.99, 1e-8});
  nn::Adam<float> disc_opt({train.disc_lr, 0.5, 0.99, 1e-8});
  const bool adversarial = train.adversarial_weight > 0.0;
  const float inv_batch = 1.0f / static_cast<float>(train.batch_size);

  for (int step = 0; step < train.steps; ++step) {
    // Constant rate for the first half, then linear decay to a tenth.
    const double t = std::max(0.0, (step - 0.5 * train.steps) / (0.5 * train.steps));
    gen_opt.set_lr(train.lr * (1.0 - 0.9 * t));
    std::mt19937_64 rng(sprite::derive_seed(train.seed, 1000 + static_cast<std::uint64_t>(step)));
    std::uniform_int_distribution<std::size_t> pick(0, dataset.samples.size() - 1);
    nn::GradBuffer<float> gen_grads, disc_grads;
    double step_loss = 0.0;
    for (int b = 0; b < train.batch_size; ++b) {
      const auto view = sprite::with_extra_accessories(dataset.samples[pick(rng)], train.co_occurrence, rng);
      const VectorX<float> z = LatentPlan::encode(view.spec, config.latent_dim, rng);
      G g;
      V img = gen.synthesize_w(g, gen.map(g, g.input(Tensor<float>({config.latent_dim}, z))));
      V loss = nn::mse(img, g.input(view.image));
      if (adversarial) loss = loss + nn::scale(nn::bce_with_logit(disc.logit(g, img), 1.0f),
                                               static_cast<float>(train.adversarial_weight));
      g.backward(loss);
      gen_grads.add(g.param_grads(), inv_batch);
      step_loss += loss.value()[0] * inv_batch;

      if (adversarial) {
        G gd;
        V real = nn::bce_with_logit(disc.logit(gd, gd.input(view.image)), 1.0f);
        V fake = nn::bce_with_logit(disc.logit(gd, gd.input(img.value())), 0.0f);
        gd.backward(real + fake);
        disc_grads.add(gd.param_grads(), inv_batch);
      }
    }
    check_finite_step(step_loss, gen_grads, step);
    gen_opt.step(gen.params(), gen_grads);
    if (adversarial) disc_opt.step(disc.params(), disc_grads);
    result.loss_series.push_back(step_loss);
    if (progress && (step % std::max(1, train.log_every) == 0 || step + 1 == train.steps)) progress(step, step_loss);
  }
  gen.freeze();
  return result;
}

void save_generator(const GeneratorModel& model, const std::filesystem::path& dir, const nlohmann::json& extra) {
  nlohmann::json cfg = extra.is_object() ? extra : nlohmann::json::object();
  cfg["generator"] = model.config().to_json();
  write_checkpoint(dir, ModelKind::Generator, model.params().export_tensors(), cfg);
}

GeneratorModel load_generator(const std::filesystem::path& dir, const std::optional<GeneratorConfig>& expected) {
  const Checkpoint ck = read_checkpoint(dir);
  require(ck.manifest.model_kind == ModelKind::Generator, ErrorKind::FormatError,
          dir.string() + " holds a " + to_string(ck.manifest.model_kind) + " checkpoint, not a generator");
  require(ck.manifest.config_snapshot.contains("generator"), ErrorKind::FormatError,
          dir.string() + ": manifest lacks the generator config");
  const GeneratorConfig cfg = GeneratorConfig::from_json(ck.manifest.config_snapshot["generator"]);
  if (expected) {
    require(cfg.latent_dim == expected->latent_dim && cfg.layers == expected->layers &&
                cfg.resolution == expected->resolution,
            ErrorKind::DimensionMismatch,
            "checkpoint has d=" + std::to_string(cfg.latent_dim) + " L=" + std::to_string(cfg.layers) +
                " R=" + std::to_string(cfg.resolution) + ", expected d=" + std::to_string(expected->latent_dim) +
                " L=" + std::to_string(expected->layers) + " R=" + std::to_string(expected->resolution));
  }
  GeneratorModel model(cfg, 0);
  model.params().import_tensors(ck.tensors);
  model.freeze();
  return model;
}

}  // namespace sdgan

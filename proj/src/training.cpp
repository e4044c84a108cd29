#include "sdgan/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sdgan {

double loss_content(const ImageTensor& pred, const ImageTensor& gt) {
  require(pred.shape() == gt.shape(), ErrorKind::ShapeMismatch,
          "prediction " + shape_string(pred.shape()) + " vs target " + shape_string(gt.shape()));
  return (pred.data().cast<double>() - gt.data().cast<double>()).squaredNorm() / static_cast<double>(pred.size());
}

double loss_perceptual(const PerceptualNet& net, const ImageTensor& pred, const ImageTensor& gt) {
  require(pred.shape() == gt.shape(), ErrorKind::ShapeMismatch,
          "prediction " + shape_string(pred.shape()) + " vs target " + shape_string(gt.shape()));
  nn::Graph<float> g(false);
  return net.distance(g, g.input(pred), g.input(gt)).value()[0];
}

double loss_class(const AttributePredictor& detector, const ImageTensor& pred) {
  return 1.0 - predict_confidence(detector, pred);
}

double total_loss(double l_mse, double l_f, double l_c, double lambda1, double lambda2) {
  return l_mse + lambda1 * l_f + lambda2 * l_c;
}

void TrainingConfig::validate() const {
  require(epochs > 0 && batch_size > 0, ErrorKind::InvalidArgument, "epochs and batch_size must be positive");
  require(lr > 0.0 && std::isfinite(lr), ErrorKind::InvalidArgument, "learning rate must be positive");
  require(lr_decay > 0.0 && lr_decay <= 1.0, ErrorKind::InvalidArgument, "lr_decay must lie in (0, 1]");
  require(decay_every > 0, ErrorKind::InvalidArgument, "decay_every must be positive");
  require(lambda1 >= 0.0 && lambda2 >= 0.0, ErrorKind::InvalidArgument, "loss weights must be non-negative");
  require(optimizer == "adam", ErrorKind::InvalidArgument, "unsupported optimizer '" + optimizer + "'");
}

double TrainingConfig::learning_rate(int epoch) const {
  require(epoch >= 0, ErrorKind::InvalidArgument, "epoch must be non-negative");
  return lr * std::pow(lr_decay, epoch / decay_every);
}

nlohmann::json TrainingConfig::to_json() const {
  return {{"epochs", epochs},         {"batch_size", batch_size}, {"lr", lr},
          {"lr_decay", lr_decay},     {"decay_every", decay_every}, {"lambda1", lambda1},
          {"lambda2", lambda2},       {"seed", seed},             {"optimizer", optimizer}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
  TrainingConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.decay_every = j.value("decay_every", c.decay_every);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.seed = j.value("seed", c.seed);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.validate();
  return c;
}

nlohmann::json LossReport::to_json() const {
  return {{"epoch", epoch}, {"step", step}, {"lr", lr},      {"l_mse", l_mse},
          {"l_f", l_f},     {"l_c", l_c},   {"l_all", l_all}};
}

StepLogger ndjson_logger(std::ostream& out) {
  return [&out](const LossReport& r) { out << r.to_json().dump() << '\n' << std::flush; };
}

FusionDataset build_fusion_dataset(const GeneratorModel& generator, const AttributePredictor& detector,
                                   const SemanticBasis& direction, const std::string& attribute_id,
                                   const FusionDataConfig& config) {
  sprite::check_discrete_attribute(attribute_id);
  require(config.samples > 0, ErrorKind::EmptyDataset, "fusion dataset needs at least one sample");
  const auto& gcfg = generator.config();
  require(direction.direction.size() == gcfg.latent_dim, ErrorKind::DimensionMismatch,
          "basis dimension " + std::to_string(direction.direction.size()) + " vs latent_dim " +
              std::to_string(gcfg.latent_dim));

  FusionDataset data;
  data.attribute_id = attribute_id;
  data.attribute_image = sprite::accessory_image(attribute_id, gcfg.resolution);
  data.samples.reserve(config.samples);
  for (std::size_t i = 0; i < config.samples; ++i) {
    std::mt19937_64 rng(sprite::derive_seed(config.seed, i));
    FusionSample s;
    s.z = LatentPlan::sample_with_attributes({}, gcfg.latent_dim, rng);
    s.w = generator.map_latent({s.z, LatentSpace::Z});
    s.spec = LatentPlan::decode(s.z);
    s.face_image = generator.synthesize(s.w);
    s.gt = sprite::apply_discrete_attribute(s.face_image, s.spec, attribute_id).image;
    s.maps = sprite::render_base_face(s.spec, gcfg.resolution).maps;
    s.region = attribute_region_mask(s.face_image, attribute_id, config.region_mode);
    s.basis = direction;
    s.basis.length = 0.0f;
    data.samples.push_back(std::move(s));
  }

  if (config.eta_mode == EtaMode::PerImage) {
    for (auto& s : data.samples) {
      auto found = search_optimal_length(generator, detector, s.w, direction, s.region, config.grid, config.lambda);
      s.basis = found.basis;
      s.breakdowns = std::move(found.breakdowns);
    }
  } else if (config.eta_mode == EtaMode::Global) {
    std::vector<std::unique_ptr<EditScorer>> scorers;
    std::vector<ScoreFn> fns;
    for (const auto& s : data.samples) {
      scorers.push_back(std::make_unique<EditScorer>(generator, detector, s.w, direction.direction, s.region,
                                                     config.lambda));
      fns.push_back([p = scorers.back().get()](double eta) { return (*p)(eta); });
    }
    const auto found = search_global_length(fns, direction, config.grid);
    for (auto& s : data.samples) {
      s.basis = found.basis;
      s.breakdowns = found.breakdowns;
    }
  }
  return data;
}

namespace {

Tensor<float> row_tensor(const VectorX<float>& v) { return Tensor<float>({static_cast<int>(v.size())}, v); }

bool all_zero(const Tensor<float>& t) { return (t.data().array() == 0.0f).all(); }

}  // namespace

TrainResult train_fusion(const GeneratorModel& generator, Fusion& fusion, const AttributePredictor& detector,
                         const FusionDataset& data, const TrainingConfig& config, const StepLogger& log,
                         const PerceptualNet& features) {
  config.validate();
  require(!data.samples.empty(), ErrorKind::EmptyDataset, "fusion training needs at least one sample");
  require(generator.frozen(), ErrorKind::InvalidArgument, "the generator must be frozen before fusion training");
  const auto& fcfg = fusion.config();
  const auto& gcfg = generator.config();
  require(fcfg.layers == gcfg.layers && fcfg.latent_dim == gcfg.latent_dim && fcfg.resolution == gcfg.resolution,
          ErrorKind::DimensionMismatch, "fusion model and generator disagree on (L, d, resolution)");

  AttributePredictor det = detector;
  det.params.set_trainable(false);
  PerceptualNet feat = features;
  feat.params().set_trainable(false);

  TrainResult result;
  result.generator_fingerprint_before = generator.params().fingerprint();
  nn::Adam<float> opt({config.lr, 0.9, 0.999, 1e-8});
  std::vector<std::size_t> order(data.samples.size());
  const auto l1 = static_cast<float>(config.lambda1), l2 = static_cast<float>(config.lambda2);

  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.learning_rate(epoch);
    opt.set_lr(lr);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(sprite::derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const float inv = 1.0f / static_cast<float>(end - start);
      nn::Graph<float> g;
      const auto attr = fusion.encode_attribute(g, g.input(data.attribute_image));
      std::vector<nn::Var<float>> terms;
      LossReport report{0, 0, 0, 0, epoch, step, lr};
      for (std::size_t k = start; k < end; ++k) {
        const auto& s = data.samples[order[k]];
        const auto lv = edit_losses(g, generator, fusion, det, feat, attr, row_tensor(s.w.values),
                                    row_tensor(s.basis.vector()), s.face_image, s.maps.stacked(), s.gt, l1, l2);
        if (!lv.image.value().all_finite())
          fail(ErrorKind::DivergenceDetected,
               "non-finite predicted image at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
        report.l_mse += lv.mse.value()[0] * inv;
        report.l_f += lv.perceptual.value()[0] * inv;
        report.l_c += lv.cls.value()[0] * inv;
        terms.push_back(lv.all);
      }
      auto total = terms.front();
      for (std::size_t k = 1; k < terms.size(); ++k) total = total + terms[k];
      total = nn::scale(total, inv);
      report.l_all = total_loss(report.l_mse, report.l_f, report.l_c, config.lambda1, config.lambda2);
      if (!std::isfinite(report.l_all) || !total.value().all_finite())
        fail(ErrorKind::DivergenceDetected,
             "non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));

      g.backward(total);
      nn::GradBuffer<float> grads;
      grads.add(g.param_grads());
      if (!grads.all_finite())
        fail(ErrorKind::DivergenceDetected,
             "non-finite gradient at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      if (step == 0)
        for (const auto& p : fusion.params().all()) {
          const auto* gp = grads.find(&p);
          if (!gp || all_zero(*gp)) result.dead_parameters.push_back(p.name);
        }
      opt.step(fusion.params(), grads);
      result.series.push_back(report);
      if (log) log(report);
      ++step;
    }
  }

  result.generator_fingerprint_after = generator.params().fingerprint();
  require(result.generator_fingerprint_after == result.generator_fingerprint_before, ErrorKind::TrainingFailed,
          "generator weights changed during fusion training");
  return result;
}

void save_trained_fusion(const Fusion& fusion, const std::filesystem::path& dir, const TrainingConfig& config,
                         const nlohmann::json& extra) {
  nlohmann::json cfg = extra.is_object() ? extra : nlohmann::json::object();
  cfg["training"] = config.to_json();
  save_fusion(fusion, dir, cfg);
}

}  // namespace sdgan

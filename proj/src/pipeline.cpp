#include "sdgan/pipeline.hpp"

#include <fstream>

namespace sdgan {

namespace fs = std::filesystem;

AppConfig::AppConfig() {
  basis.samples = 10000;
  fusion_data.samples = 400;
}

std::string eta_mode_name(EtaMode m) {
  switch (m) {
    case EtaMode::PerImage: return "per_image";
    case EtaMode::Global: return "global";
    case EtaMode::Disabled: return "disabled";
  }
  return "?";
}

EtaMode eta_mode_from_string(const std::string& s) {
  if (s == "per_image") return EtaMode::PerImage;
  if (s == "global") return EtaMode::Global;
  if (s == "disabled") return EtaMode::Disabled;
  fail(ErrorKind::InvalidArgument, "unknown eta mode '" + s + "'");
}

namespace {

nlohmann::json svm_json(const SvmConfig& s) {
  return {{"c", s.c}, {"tolerance", s.tolerance}, {"max_epochs", s.max_epochs}, {"bias_feature", s.bias_feature}};
}

template <typename T>
void read_into(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

nlohmann::json AppConfig::to_json() const {
  nlohmann::json training_j = {
      {"sprites", {{"samples", sprite_samples}, {"seed", sprite_seed}, {"mix", mix}}},
      {"generator",
       {{"steps", generator.steps},
        {"batch_size", generator.batch_size},
        {"lr", generator.lr},
        {"adversarial_weight", generator.adversarial_weight},
        {"co_occurrence", generator.co_occurrence},
        {"disc_lr", generator.disc_lr},
        {"seed", generator.seed}}},
      {"predictor",
       {{"epochs", predictor.epochs},
        {"batch_size", predictor.batch_size},
        {"lr", predictor.lr},
        {"holdout_fraction", predictor.holdout_fraction},
        {"augment_probability", predictor.augment_probability},
        {"seed", predictor.seed},
        {"detector_seed", detector_seed},
        {"min_accuracy", predictor.min_accuracy},
        {"min_r2", predictor.min_r2}}},
      {"basis",
       {{"samples", basis.samples},
        {"k_pos", basis.k_pos},
        {"k_neg", basis.k_neg},
        {"seed", basis.seed},
        {"svm", svm_json(basis.svm)},
        {"grid", fusion_data.grid.to_string()},
        {"lambda", fusion_data.lambda}}},
      {"fusion_model", fusion.to_json()},
      {"fusion_seed", fusion_seed},
      {"identity_pretrain",
       {{"enabled", identity_pretrain},
        {"epochs", identity.epochs},
        {"batch_size", identity.batch_size},
        {"lr", identity.lr},
        {"seed", identity.seed}}},
      {"fusion_data",
       {{"samples", fusion_data.samples},
        {"seed", fusion_data.seed},
        {"eta_mode", eta_mode_name(fusion_data.eta_mode)},
        {"region_mode", fusion_data.region_mode == RegionMode::Footprint ? "footprint" : "whole_face"}}},
      {"fusion", training.to_json()},
      {"eval",
       {{"samples", eval.samples},
        {"seed", eval.seed},
        {"interpolation_samples", eval.interpolation_samples},
        {"interpolation_steps", eval.interpolation_steps},
        {"success_confidence", eval.success_confidence},
        {"allowed_violations", eval.allowed_violations},
        {"strip_samples", eval.strip_samples}}}};
  return {{"dims", {{"latent_dim", dims.latent_dim}, {"layers", dims.layers}, {"resolution", dims.resolution}}},
          {"paths", {{"models", paths.models}, {"data", paths.data}, {"reports", paths.reports}}},
          {"training", training_j},
          {"service",
           {{"host", service.host},
            {"port", service.port},
            {"max_count", service.max_count},
            {"zero_offset", service.zero_offset}}}};
}

AppConfig AppConfig::from_json(const nlohmann::json& j) {
  AppConfig c;
  try {
    if (j.contains("dims")) {
      const auto& d = j["dims"];
      read_into(d, "latent_dim", c.dims.latent_dim);
      read_into(d, "layers", c.dims.layers);
      read_into(d, "resolution", c.dims.resolution);
      c.dims.validate();
      c.fusion.latent_dim = c.dims.latent_dim;
      c.fusion.layers = c.dims.layers;
      c.fusion.resolution = c.dims.resolution;
    }
    if (j.contains("paths")) {
      read_into(j["paths"], "models", c.paths.models);
      read_into(j["paths"], "data", c.paths.data);
      read_into(j["paths"], "reports", c.paths.reports);
    }
    if (j.contains("training")) {
      const auto& t = j["training"];
      if (t.contains("sprites")) {
        read_into(t["sprites"], "samples", c.sprite_samples);
        read_into(t["sprites"], "seed", c.sprite_seed);
        read_into(t["sprites"], "mix", c.mix);
      }
      if (t.contains("generator")) {
        const auto& g = t["generator"];
        read_into(g, "steps", c.generator.steps);
        read_into(g, "batch_size", c.generator.batch_size);
        read_into(g, "lr", c.generator.lr);
        read_into(g, "adversarial_weight", c.generator.adversarial_weight);
        read_into(g, "co_occurrence", c.generator.co_occurrence);
        read_into(g, "disc_lr", c.generator.disc_lr);
        read_into(g, "seed", c.generator.seed);
      }
      if (t.contains("predictor")) {
        const auto& p = t["predictor"];
        read_into(p, "epochs", c.predictor.epochs);
        read_into(p, "batch_size", c.predictor.batch_size);
        read_into(p, "lr", c.predictor.lr);
        read_into(p, "holdout_fraction", c.predictor.holdout_fraction);
        read_into(p, "augment_probability", c.predictor.augment_probability);
        read_into(p, "seed", c.predictor.seed);
        read_into(p, "detector_seed", c.detector_seed);
        read_into(p, "min_accuracy", c.predictor.min_accuracy);
        read_into(p, "min_r2", c.predictor.min_r2);
      }
      if (t.contains("basis")) {
        const auto& b = t["basis"];
        read_into(b, "samples", c.basis.samples);
        read_into(b, "k_pos", c.basis.k_pos);
        read_into(b, "k_neg", c.basis.k_neg);
        read_into(b, "seed", c.basis.seed);
        if (b.contains("svm")) {
          read_into(b["svm"], "c", c.basis.svm.c);
          read_into(b["svm"], "tolerance", c.basis.svm.tolerance);
          read_into(b["svm"], "max_epochs", c.basis.svm.max_epochs);
          read_into(b["svm"], "bias_feature", c.basis.svm.bias_feature);
        }
        if (b.contains("grid")) c.fusion_data.grid = GridSpec::parse(b["grid"].get<std::string>());
        read_into(b, "lambda", c.fusion_data.lambda);
      }
      if (t.contains("fusion_model")) c.fusion = FusionConfig::from_json(t["fusion_model"]);
      read_into(t, "fusion_seed", c.fusion_seed);
      if (t.contains("identity_pretrain")) {
        const auto& p = t["identity_pretrain"];
        read_into(p, "enabled", c.identity_pretrain);
        read_into(p, "epochs", c.identity.epochs);
        read_into(p, "batch_size", c.identity.batch_size);
        read_into(p, "lr", c.identity.lr);
        read_into(p, "seed", c.identity.seed);
      }
      if (t.contains("fusion_data")) {
        const auto& f = t["fusion_data"];
        read_into(f, "samples", c.fusion_data.samples);
        read_into(f, "seed", c.fusion_data.seed);
        if (f.contains("eta_mode")) c.fusion_data.eta_mode = eta_mode_from_string(f["eta_mode"].get<std::string>());
        if (f.contains("region_mode"))
          c.fusion_data.region_mode =
              f["region_mode"].get<std::string>() == "whole_face" ? RegionMode::WholeFace : RegionMode::Footprint;
      }
      if (t.contains("fusion")) c.training = TrainingConfig::from_json(t["fusion"]);
      if (t.contains("eval")) {
        const auto& e = t["eval"];
        read_into(e, "samples", c.eval.samples);
        read_into(e, "seed", c.eval.seed);
        read_into(e, "interpolation_samples", c.eval.interpolation_samples);
        read_into(e, "interpolation_steps", c.eval.interpolation_steps);
        read_into(e, "success_confidence", c.eval.success_confidence);
        read_into(e, "allowed_violations", c.eval.allowed_violations);
        read_into(e, "strip_samples", c.eval.strip_samples);
      }
    }
    if (j.contains("service")) {
      const auto& s = j["service"];
      read_into(s, "host", c.service.host);
      read_into(s, "port", c.service.port);
      read_into(s, "max_count", c.service.max_count);
      read_into(s, "zero_offset", c.service.zero_offset);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, std::string("config: ") + e.what());
  }
  return c;
}

AppConfig AppConfig::load(const fs::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::FormatError, path.string() + ": " + e.what());
  }
}

std::vector<std::string> all_attributes() {
  std::vector<std::string> out = sprite::discrete_attributes();
  for (const auto& a : sprite::continuous_attributes()) out.push_back(a);
  return out;
}

const GeneratorModel& ModelBundle::gen() const {
  require(generator.has_value(), ErrorKind::ModelNotLoaded, "no generator loaded");
  return *generator;
}

const AttributePredictor& ModelBundle::detector(const std::string& a) const {
  auto it = detectors.find(a);
  require(it != detectors.end(), ErrorKind::ModelNotLoaded, "no detector loaded for '" + a + "'");
  return it->second;
}

const SemanticBasis& ModelBundle::basis(const std::string& a) const {
  auto it = bases.find(a);
  require(it != bases.end(), ErrorKind::ModelNotLoaded, "no basis loaded for '" + a + "'");
  return it->second;
}

const Fusion& ModelBundle::fusion(const std::string& a) const {
  auto it = fusions.find(a);
  require(it != fusions.end(), ErrorKind::ModelNotLoaded, "no fusion model loaded for '" + a + "'");
  return it->second;
}

ModelBundle load_models(const ModelLayout& layout, const GeneratorConfig& dims) {
  ModelBundle b;
  if (fs::exists(layout.generator() / "manifest.json")) {
    b.generator = load_generator(layout.generator(), dims);
    b.hashes["generator"] = model_config_hash(layout.generator());
  }
  for (const auto& a : all_attributes()) {
    if (fs::exists(layout.predictor(a) / "manifest.json")) {
      b.predictors.emplace(a, load_predictor(layout.predictor(a)));
      b.hashes["predictor/" + a] = model_config_hash(layout.predictor(a));
    }
    if (fs::exists(layout.detector(a) / "manifest.json")) {
      b.detectors.emplace(a, load_predictor(layout.detector(a)));
      b.hashes["detector/" + a] = model_config_hash(layout.detector(a));
    }
    if (fs::exists(layout.basis(a))) b.bases.emplace(a, load_basis(layout.basis(a)));
    if (fs::exists(layout.fusion(a) / "manifest.json")) {
      b.fusions.emplace(a, load_fusion(layout.fusion(a)));
      b.hashes["fusion/" + a] = model_config_hash(layout.fusion(a));
    }
  }
  return b;
}

sprite::Dataset training_sprites(const AppConfig& config) {
  return sprite::generate_dataset(config.sprite_samples, config.sprite_seed, config.mix, config.dims.resolution);
}

void stage_generator(const AppConfig& config, const sprite::Dataset& sprites, const ModelLayout& layout,
                     PipelineRun& run, const Progress& progress) {
  auto result = train_generator(sprites, config.dims, config.generator, [&](int step, double loss) {
    if (progress) progress("generator step " + std::to_string(step) + " loss " + std::to_string(loss));
  });
  run.generator_loss = result.loss_series;
  save_generator(result.model, layout.generator(), {{"sprite_seed", config.sprite_seed}});
}

void stage_predictors(const AppConfig& config, const sprite::Dataset& sprites, const ModelLayout& layout,
                      const Progress& progress) {
  for (const auto& a : all_attributes()) {
    const auto kind = kind_for_attribute(a);
    const auto model = train_predictor(label_dataset(sprites, a), a, kind, ModelKind::Predictor, config.predictor);
    save_predictor(model, layout.predictor(a));
    if (progress) progress("predictor " + a + " " + model.metrics.dump());
    if (kind != PredictorKind::BinaryPresence) continue;
    PredictorTrainConfig dc = config.predictor;
    dc.seed = config.detector_seed;
    const auto det =
        train_predictor(label_dataset(sprites, a, 0.3, config.detector_seed), a, kind, ModelKind::Detector, dc);
    save_predictor(det, layout.detector(a));
    if (progress) progress("detector " + a + " " + det.metrics.dump());
  }
}

void stage_bases(const AppConfig& config, const ModelLayout& layout, const Progress& progress) {
  const auto gen = load_generator(layout.generator(), config.dims);
  for (const auto& a : all_attributes()) {
    const auto pred = load_predictor(layout.predictor(a));
    const auto learned = learn_basis(gen, pred, config.basis);
    fs::create_directories(layout.basis(a).parent_path());
    save_basis(layout.basis(a), learned.fit.basis,
               {{"train_accuracy", learned.fit.train_accuracy},
                {"svm_epochs", learned.fit.epochs},
                {"samples", config.basis.samples},
                {"lambda", config.fusion_data.lambda},
                {"grid", config.fusion_data.grid.to_string()}});
    if (progress)
      progress("basis " + a + " accuracy " + std::to_string(learned.fit.train_accuracy) + " epochs " +
               std::to_string(learned.fit.epochs));
  }
}

FusionRun fit_fusion(const AppConfig& config, const sprite::Dataset& sprites, const GeneratorModel& gen,
                     const AttributePredictor& det, const SemanticBasis& basis, EtaMode eta_mode, const fs::path& out,
                     const Progress& progress) {
  const std::string attribute_id = basis.attribute_id;
  require(det.attribute_id == attribute_id, ErrorKind::RoleMismatch,
          "detector is for '" + det.attribute_id + "', basis for '" + attribute_id + "'");
  FusionDataConfig dc = config.fusion_data;
  dc.eta_mode = eta_mode;
  const auto data = build_fusion_dataset(gen, det, basis, attribute_id, dc);

  Fusion fusion(config.fusion, config.fusion_seed);
  nlohmann::json extra = {{"attribute_id", attribute_id}, {"eta_mode", eta_mode_name(eta_mode)}};
  if (config.identity_pretrain) {
    const auto id = pretrain_face_encoder(fusion, sprites, config.identity);
    extra["identity_accuracy"] = id.train_accuracy;
  }

  const fs::path log_path = out.string() + ".train_log.ndjson";
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  FusionRun run;
  {
    std::ofstream log(log_path, std::ios::trunc);
    require(static_cast<bool>(log), ErrorKind::IoError, "cannot write " + log_path.string());
    auto sink = ndjson_logger(log);
    run.train = train_fusion(gen, fusion, det, data, config.training, [&](const LossReport& r) {
      sink(r);
      if (progress && r.step % 50 == 0) progress("fusion " + attribute_id + " " + r.to_json().dump());
    });
  }
  for (const auto& s : data.samples) run.etas.push_back(s.basis.length);
  save_trained_fusion(fusion, out, config.training, extra);
  fs::rename(log_path, out / "train_log.ndjson");
  return run;
}

FusionRun stage_fusion(const AppConfig& config, const sprite::Dataset& sprites, const ModelLayout& layout,
                       const std::string& attribute_id, EtaMode eta_mode, const fs::path& out,
                       const Progress& progress) {
  const auto gen = load_generator(layout.generator(), config.dims);
  const auto det = load_predictor(layout.detector(attribute_id));
  const auto basis = load_basis(layout.basis(attribute_id));
  require(basis.attribute_id == attribute_id, ErrorKind::RoleMismatch,
          "basis file holds '" + basis.attribute_id + "', expected '" + attribute_id + "'");
  return fit_fusion(config, sprites, gen, det, basis, eta_mode, out, progress);
}

PipelineRun run_pipeline(const AppConfig& config, const ModelLayout& layout, const Progress& progress) {
  PipelineRun run;
  const auto sprites = training_sprites(config);
  stage_generator(config, sprites, layout, run, progress);
  stage_predictors(config, sprites, layout, progress);
  stage_bases(config, layout, progress);
  for (const auto& a : sprite::discrete_attributes())
    run.fusion[a] = stage_fusion(config, sprites, layout, a, config.fusion_data.eta_mode, layout.fusion(a), progress);
  return run;
}

EvalOutcome evaluate_pipeline(const ModelBundle& models, const AppConfig& config, bool use_basis,
                              const Progress& progress) {
  const auto& gen = models.gen();
  EvalOutcome out;
  out.report.model_hashes = models.hashes;

  std::map<std::string, const AttributePredictor*> predictors;
  for (const auto& [a, p] : models.predictors) predictors[a] = &p;
  const auto& retained = sprite::continuous_attributes();

  std::vector<NamedDirection> learned;
  for (const auto& a : all_attributes())
    if (models.bases.count(a)) learned.emplace_back(a, models.basis(a).direction.cast<double>());
  std::vector<NamedDirection> adjusted;

  for (const auto& a : sprite::discrete_attributes()) {
    if (!models.fusions.count(a)) continue;
    const auto& fusion = models.fusion(a);
    const auto& det = models.detector(a);
    FusionDataConfig dc = config.fusion_data;
    dc.samples = config.eval.samples;
    dc.seed = config.eval.seed;
    if (!use_basis) dc.eta_mode = EtaMode::Disabled;
    const auto held = build_fusion_dataset(gen, det, models.basis(a), a, dc);

    AttributeOutcome ao;
    std::vector<ImageTensor> originals, edits;
    std::vector<EditInput> inputs;
    std::size_t passed = 0, checked = 0;
    for (std::size_t i = 0; i < held.samples.size(); ++i) {
      const auto& s = held.samples[i];
      const auto e = forward_edit(gen, fusion, s.basis, s.w, s.face_image, held.attribute_image, s.maps);
      const double conf = predict_confidence(det, e.image);
      ao.mean_confidence += conf;
      ao.success_rate += conf >= config.eval.success_confidence;
      ao.etas.push_back(s.basis.length);
      originals.push_back(s.face_image);
      edits.push_back(e.image);
      inputs.push_back({s.w, s.face_image, s.maps});
      if (i < config.eval.interpolation_samples) {
        InterpolationSeries series{a, i, {}};
        const auto frames = interpolate_edit(gen, s.w, e.n_a, config.eval.interpolation_steps);
        for (const auto& f : frames) series.confidence.push_back(predict_confidence(det, f));
        if (i < config.eval.strip_samples) ao.strips.push_back(hstack(frames));
        passed += monotonic_violations(series.confidence) <= config.eval.allowed_violations;
        ++checked;
        out.report.interpolation.push_back(std::move(series));
      }
    }
    const auto n = static_cast<double>(held.samples.size());
    ao.mean_confidence /= n;
    ao.success_rate /= n;
    ao.interpolation_pass_rate = checked ? static_cast<double>(passed) / static_cast<double>(checked) : 0.0;
    predictors[a] = &det;
    ao.re_score = re_score(predictors, originals, edits, a, retained);
    out.report.re_scores.push_back(ao.re_score);
    adjusted.emplace_back(a, edit_direction_for_method(inputs, fusion, held.attribute_image, models.basis(a),
                                                       DirectionMode::MeanAdjusted)
                                 .cast<double>());
    out.report.summary[a] = {{"success_rate", ao.success_rate},
                             {"mean_confidence", ao.mean_confidence},
                             {"interpolation_pass_rate", ao.interpolation_pass_rate}};
    if (progress)
      progress("eval " + a + " success " + std::to_string(ao.success_rate) + " mean conf " +
               std::to_string(ao.mean_confidence));
    out.attributes[a] = std::move(ao);
  }
  if (learned.size() >= 2) {
    out.directions = decoupling_matrix(learned);
    out.report.decoupling[to_string(DirectionMode::BasisOnly)] = out.directions;
  }
  if (adjusted.size() >= 2) out.report.decoupling[to_string(DirectionMode::MeanAdjusted)] = decoupling_matrix(adjusted);
  out.report.summary["use_basis"] = use_basis;
  return out;
}

}  // namespace sdgan

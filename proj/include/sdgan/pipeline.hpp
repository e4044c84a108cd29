#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdgan/attribute_models.hpp"
#include "sdgan/evaluation.hpp"
#include "sdgan/fusion.hpp"
#include "sdgan/generator.hpp"
#include "sdgan/prior_basis.hpp"
#include "sdgan/sprite.hpp"
#include "sdgan/training.hpp"

namespace sdgan {

std::string eta_mode_name(EtaMode mode);  // per_image, global, disabled
EtaMode eta_mode_from_string(const std::string& s);

struct EvalConfig {
  std::size_t samples = 200;
  std::uint64_t seed = 91;
  std::size_t interpolation_samples = 50;
  int interpolation_steps = 5;
  double success_confidence = 0.9;
  int allowed_violations = 1;
  std::size_t strip_samples = 4;  // interpolation strips kept as images
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_count = 64;
  bool zero_offset = false;  // debug: edits use n_o = 0
};

struct PathsConfig {
  std::string models = "models";
  std::string data = "data";
  std::string reports = "reports";
};

// Everything the stage runners need. The JSON form has the sections dims,
// paths, training and service.
struct AppConfig {
  GeneratorConfig dims;
  PathsConfig paths;

  std::size_t sprite_samples = 2000;
  std::uint64_t sprite_seed = 7;
  sprite::AttributeMix mix = {{"face_mask", 0.2}, {"frame_glasses", 0.2}, {"sun_glasses", 0.2}};
  GeneratorTrainConfig generator;
  PredictorTrainConfig predictor;
  std::uint64_t detector_seed = 17;
  BasisLearnConfig basis;
  FusionConfig fusion;
  std::uint64_t fusion_seed = 71;
  bool identity_pretrain = true;
  IdentityPretrainConfig identity;
  FusionDataConfig fusion_data;
  TrainingConfig training;
  EvalConfig eval;
  ServiceConfig service;

  AppConfig();
  nlohmann::json to_json() const;
  static AppConfig from_json(const nlohmann::json& j);
  static AppConfig load(const std::filesystem::path& path);
};

// models/ layout shared by the CLI, the service and the tests.
struct ModelLayout {
  std::filesystem::path root;

  std::filesystem::path generator() const { return root / "generator"; }
  std::filesystem::path predictor(const std::string& a) const { return root / "predictors" / a; }
  std::filesystem::path detector(const std::string& a) const { return root / "detectors" / a; }
  std::filesystem::path basis(const std::string& a) const { return root / "bases" / (a + ".sdgt"); }
  std::filesystem::path fusion(const std::string& a) const { return root / "fusion" / a; }
};

std::vector<std::string> all_attributes();  // discrete then continuous

struct ModelBundle {
  std::optional<GeneratorModel> generator;
  std::map<std::string, AttributePredictor> predictors;
  std::map<std::string, AttributePredictor> detectors;
  std::map<std::string, SemanticBasis> bases;
  std::map<std::string, Fusion> fusions;
  std::map<std::string, std::string> hashes;

  const GeneratorModel& gen() const;
  const AttributePredictor& detector(const std::string& a) const;
  const SemanticBasis& basis(const std::string& a) const;
  const Fusion& fusion(const std::string& a) const;
};

// Loads whatever the layout holds; a missing generator is not an error here.
ModelBundle load_models(const ModelLayout& layout, const GeneratorConfig& dims);

using Progress = std::function<void(const std::string&)>;

struct FusionRun {
  TrainResult train;
  std::vector<float> etas;  // per training sample
};

struct PipelineRun {
  std::vector<double> generator_loss;
  std::map<std::string, FusionRun> fusion;
};

sprite::Dataset training_sprites(const AppConfig& config);

void stage_generator(const AppConfig& config, const sprite::Dataset& sprites, const ModelLayout& layout,
                     PipelineRun& run, const Progress& progress = {});
void stage_predictors(const AppConfig& config, const sprite::Dataset& sprites, const ModelLayout& layout,
                      const Progress& progress = {});
void stage_bases(const AppConfig& config, const ModelLayout& layout, const Progress& progress = {});
// Builds the fusion dataset, trains and writes the checkpoint plus
// train_log.ndjson into `out`. The attribute is the basis's.
FusionRun fit_fusion(const AppConfig& config, const sprite::Dataset& sprites, const GeneratorModel& generator,
                     const AttributePredictor& detector, const SemanticBasis& basis, EtaMode eta_mode,
                     const std::filesystem::path& out, const Progress& progress = {});
FusionRun stage_fusion(const AppConfig& config, const sprite::Dataset& sprites, const ModelLayout& layout,
                       const std::string& attribute_id, EtaMode eta_mode, const std::filesystem::path& out,
                       const Progress& progress = {});

// All stages in order into `layout`.
PipelineRun run_pipeline(const AppConfig& config, const ModelLayout& layout, const Progress& progress = {});

struct AttributeOutcome {
  double success_rate = 0.0;    // share of edits with F_det >= success_confidence
  double mean_confidence = 0.0;  // mean F_det(I_pred)
  ReScoreReport re_score;
  double interpolation_pass_rate = 0.0;
  std::vector<float> etas;
  std::vector<ImageTensor> strips;
};

struct EvalOutcome {
  EvalReport report;
  std::map<std::string, AttributeOutcome> attributes;
  DecouplingMatrix directions;
};

// Held-out edits for every discrete attribute with a fusion model. With
// use_basis false the edit uses n_b = 0.
EvalOutcome evaluate_pipeline(const ModelBundle& models, const AppConfig& config, bool use_basis = true,
                              const Progress& progress = {});

}  // namespace sdgan

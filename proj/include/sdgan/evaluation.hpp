#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sdgan/attribute_models.hpp"
#include "sdgan/fusion.hpp"
#include "sdgan/generator.hpp"
#include "sdgan/training.hpp"

namespace sdgan {

struct ReScoreReport {
  std::string target_attribute;
  std::map<std::string, double> retained;  // mean |F_a(edit) - F_a(orig)|
  double target_after = 0.0;               // mean F_target(edit)
  std::size_t n_samples = 0;

  nlohmann::json to_json() const;
  static ReScoreReport from_json(const nlohmann::json& j);
  bool operator==(const ReScoreReport&) const = default;
};

using ConfidenceTable = std::map<std::string, std::vector<double>>;

// Arithmetic core: per-attribute confidences before and after the edits.
// `target_attribute` must be a key of `after`.
ReScoreReport re_score(const ConfidenceTable& before, const ConfidenceTable& after, const std::string& target_attribute);

// Scores image pairs with the given predictors. `retained` lists the drift
// attributes; the target is scored on the edits only. Throws LengthMismatch,
// MissingPredictor.
ReScoreReport re_score(const std::map<std::string, const AttributePredictor*>& predictors,
                       const std::vector<ImageTensor>& originals, const std::vector<ImageTensor>& edits,
                       const std::string& target_attribute, const std::vector<std::string>& retained);

struct DecouplingMatrix {
  std::vector<std::string> attribute_ids;
  Eigen::MatrixXd cos;

  double max_off_diagonal() const;
  nlohmann::json to_json() const;
  static DecouplingMatrix from_json(const nlohmann::json& j);
  bool operator==(const DecouplingMatrix& o) const {
    return attribute_ids == o.attribute_ids && cos.rows() == o.cos.rows() && cos.cols() == o.cos.cols() && cos == o.cos;
  }
};

using NamedDirection = std::pair<std::string, Eigen::VectorXd>;

// Pairwise cosines of flattened directions, in the given order. Throws
// ZeroVector, InvalidArgument (fewer than two, or differing lengths).
DecouplingMatrix decoupling_matrix(const std::vector<NamedDirection>& directions);

enum class DirectionMode { BasisOnly, MeanAdjusted };

std::string to_string(DirectionMode mode);
DirectionMode direction_mode_from_string(const std::string& s);

struct EditInput {
  LatentCode<float> w;
  ImageTensor face_image;
  sprite::ShapeMaps maps;
};

// basis_only: length * direction (d entries). mean_adjusted: the mean of
// n_a = n_o + broadcast(n_b) over samples, flattened row-major (L*d).
// Throws EmptySamples for mean_adjusted without samples.
VectorX<float> edit_direction_for_method(const std::vector<EditInput>& samples, const Fusion& fusion,
                                         const ImageTensor& attribute_image, const SemanticBasis& basis,
                                         DirectionMode mode);

// Frames G(w + t_k n_a), t_k = k / (K - 1). Throws InvalidSteps for K < 2.
std::vector<ImageTensor> interpolate_edit(const GeneratorModel& generator, const LatentCode<float>& w,
                                          const ExtendedLatent<float>& n_a, int steps);

// Adjacent pairs where the series decreases.
int monotonic_violations(const std::vector<double>& series);

struct InterpolationSeries {
  std::string attribute_id;
  std::size_t sample = 0;
  std::vector<double> confidence;

  bool operator==(const InterpolationSeries&) const = default;
};

struct EvalReport {
  std::vector<ReScoreReport> re_scores;
  std::map<std::string, DecouplingMatrix> decoupling;  // keyed by direction mode
  std::vector<InterpolationSeries> interpolation;
  std::map<std::string, std::string> model_hashes;  // model name -> config_snapshot hash
  nlohmann::json summary = nlohmann::json::object();

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  bool operator==(const EvalReport&) const = default;
};

// Throws IoError.
void write_eval_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_eval_report(const std::filesystem::path& path);

// config_snapshot hash of a checkpoint directory.
std::string model_config_hash(const std::filesystem::path& checkpoint_dir);

}  // namespace sdgan

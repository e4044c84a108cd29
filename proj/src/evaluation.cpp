#include "sdgan/evaluation.hpp"

#include <algorithm>
#include <cmath>

namespace sdgan {

nlohmann::json ReScoreReport::to_json() const {
  return {{"target_attribute", target_attribute},
          {"retained", retained},
          {"target_after", target_after},
          {"n_samples", n_samples}};
}

ReScoreReport ReScoreReport::from_json(const nlohmann::json& j) {
  ReScoreReport r;
  r.target_attribute = j.at("target_attribute").get<std::string>();
  r.retained = j.at("retained").get<std::map<std::string, double>>();
  r.target_after = j.at("target_after").get<double>();
  r.n_samples = j.at("n_samples").get<std::size_t>();
  return r;
}

ReScoreReport re_score(const ConfidenceTable& before, const ConfidenceTable& after, const std::string& target_attribute) {
  auto target = after.find(target_attribute);
  require(target != after.end(), ErrorKind::MissingPredictor, "no confidences for target '" + target_attribute + "'");
  const std::size_t n = target->second.size();
  require(n >= 1, ErrorKind::LengthMismatch, "re-score needs at least one sample");

  ReScoreReport r;
  r.target_attribute = target_attribute;
  r.n_samples = n;
  double sum = 0.0;
  for (double c : target->second) sum += c;
  r.target_after = sum / static_cast<double>(n);
  for (const auto& [attr, b] : before) {
    auto a = after.find(attr);
    require(a != after.end(), ErrorKind::MissingPredictor, "no post-edit confidences for '" + attr + "'");
    require(b.size() == n && a->second.size() == n, ErrorKind::LengthMismatch,
            "confidence series for '" + attr + "' differ in length");
    double drift = 0.0;
    for (std::size_t i = 0; i < n; ++i) drift += std::abs(a->second[i] - b[i]);
    r.retained[attr] = drift / static_cast<double>(n);
  }
  return r;
}

ReScoreReport re_score(const std::map<std::string, const AttributePredictor*>& predictors,
                       const std::vector<ImageTensor>& originals, const std::vector<ImageTensor>& edits,
                       const std::string& target_attribute, const std::vector<std::string>& retained) {
  require(originals.size() == edits.size(), ErrorKind::LengthMismatch,
          std::to_string(originals.size()) + " originals vs " + std::to_string(edits.size()) + " edits");
  require(!edits.empty(), ErrorKind::LengthMismatch, "re-score needs at least one sample");
  const auto get = [&](const std::string& a) {
    auto it = predictors.find(a);
    require(it != predictors.end() && it->second, ErrorKind::MissingPredictor, "no predictor for '" + a + "'");
    return it->second;
  };
  ConfidenceTable before, after;
  after[target_attribute] = batch_confidences(*get(target_attribute), edits);
  for (const auto& a : retained) {
    before[a] = batch_confidences(*get(a), originals);
    after[a] = batch_confidences(*get(a), edits);
  }
  return re_score(before, after, target_attribute);
}

double DecouplingMatrix::max_off_diagonal() const {
  double m = 0.0;
  for (Eigen::Index i = 0; i < cos.rows(); ++i)
    for (Eigen::Index j = 0; j < cos.cols(); ++j)
      if (i != j) m = std::max(m, std::abs(cos(i, j)));
  return m;
}

nlohmann::json DecouplingMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < cos.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(cos.cols()));
    for (Eigen::Index j = 0; j < cos.cols(); ++j) r[static_cast<std::size_t>(j)] = cos(i, j);
    rows.push_back(r);
  }
  return {{"attribute_ids", attribute_ids}, {"cos", rows}, {"max_abs_off_diagonal", max_off_diagonal()}};
}

DecouplingMatrix DecouplingMatrix::from_json(const nlohmann::json& j) {
  DecouplingMatrix m;
  m.attribute_ids = j.at("attribute_ids").get<std::vector<std::string>>();
  const auto n = static_cast<Eigen::Index>(m.attribute_ids.size());
  m.cos = Eigen::MatrixXd::Zero(n, n);
  const auto& rows = j.at("cos");
  require(rows.size() == m.attribute_ids.size(), ErrorKind::FormatError, "decoupling matrix row count");
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = rows[static_cast<std::size_t>(i)].get<std::vector<double>>();
    require(static_cast<Eigen::Index>(r.size()) == n, ErrorKind::FormatError, "decoupling matrix row length");
    for (Eigen::Index k = 0; k < n; ++k) m.cos(i, k) = r[static_cast<std::size_t>(k)];
  }
  return m;
}

DecouplingMatrix decoupling_matrix(const std::vector<NamedDirection>& directions) {
  require(directions.size() >= 2, ErrorKind::InvalidArgument, "decoupling needs at least two directions");
  const auto dim = directions.front().second.size();
  std::vector<Eigen::VectorXd> unit;
  DecouplingMatrix m;
  for (const auto& [name, v] : directions) {
    require(v.size() == dim, ErrorKind::InvalidArgument, "direction '" + name + "' has a different length");
    const double norm = v.norm();
    require(norm > 0.0, ErrorKind::ZeroVector, "direction '" + name + "' is zero");
    unit.push_back(v / norm);
    m.attribute_ids.push_back(name);
  }
  const auto n = static_cast<Eigen::Index>(unit.size());
  m.cos = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double c = std::clamp(unit[static_cast<std::size_t>(i)].dot(unit[static_cast<std::size_t>(j)]), -1.0, 1.0);
      m.cos(i, j) = m.cos(j, i) = c;
    }
  return m;
}

std::string to_string(DirectionMode mode) { return mode == DirectionMode::BasisOnly ? "basis_only" : "mean_adjusted"; }

DirectionMode direction_mode_from_string(const std::string& s) {
  if (s == "basis_only") return DirectionMode::BasisOnly;
  if (s == "mean_adjusted") return DirectionMode::MeanAdjusted;
  fail(ErrorKind::InvalidArgument, "unknown direction mode '" + s + "'");
}

VectorX<float> edit_direction_for_method(const std::vector<EditInput>& samples, const Fusion& fusion,
                                         const ImageTensor& attribute_image, const SemanticBasis& basis,
                                         DirectionMode mode) {
  if (mode == DirectionMode::BasisOnly) return basis.vector();
  require(!samples.empty(), ErrorKind::EmptySamples, "mean_adjusted direction needs at least one sample");
  const auto& cfg = fusion.config();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(cfg.layers, cfg.latent_dim);
  for (const auto& s : samples)
    acc += compose_adjustment(predict_offset(fusion, s.face_image, attribute_image, s.maps), basis).cast<double>();
  acc /= static_cast<double>(samples.size());
  RowMatrixX<float> mean = acc.cast<float>();
  return Eigen::Map<const VectorX<float>>(mean.data(), mean.size());
}

std::vector<ImageTensor> interpolate_edit(const GeneratorModel& generator, const LatentCode<float>& w,
                                          const ExtendedLatent<float>& n_a, int steps) {
  require(steps >= 2, ErrorKind::InvalidSteps, "interpolation needs at least 2 steps, got " + std::to_string(steps));
  check_latent(w, generator.config().latent_dim);
  std::vector<ImageTensor> frames;
  frames.reserve(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    if (k == 0) {
      frames.push_back(generator.synthesize(w));
      continue;
    }
    const float t = k == steps - 1 ? 1.0f : static_cast<float>(k) / static_cast<float>(steps - 1);
    const ExtendedLatent<float> scaled = k == steps - 1 ? n_a : ExtendedLatent<float>(t * n_a);
    frames.push_back(generator.synthesize(apply_edit_latent(w, scaled)));
  }
  return frames;
}

int monotonic_violations(const std::vector<double>& series) {
  int v = 0;
  for (std::size_t i = 1; i < series.size(); ++i) v += series[i] < series[i - 1];
  return v;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["re_score"] = nlohmann::json::array();
  for (const auto& r : re_scores) j["re_score"].push_back(r.to_json());
  j["decoupling"] = nlohmann::json::object();
  for (const auto& [k, m] : decoupling) j["decoupling"][k] = m.to_json();
  j["interpolation"] = nlohmann::json::array();
  for (const auto& s : interpolation)
    j["interpolation"].push_back({{"attribute_id", s.attribute_id},
                                  {"sample", s.sample},
                                  {"confidence", s.confidence},
                                  {"violations", monotonic_violations(s.confidence)}});
  j["models"] = model_hashes;
  j["summary"] = summary;
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  for (const auto& x : j.value("re_score", nlohmann::json::array())) r.re_scores.push_back(ReScoreReport::from_json(x));
  const auto decoupling = j.value("decoupling", nlohmann::json::object());
  for (const auto& [k, v] : decoupling.items()) r.decoupling[k] = DecouplingMatrix::from_json(v);
  for (const auto& x : j.value("interpolation", nlohmann::json::array()))
    r.interpolation.push_back({x.at("attribute_id").get<std::string>(), x.at("sample").get<std::size_t>(),
                               x.at("confidence").get<std::vector<double>>()});
  r.model_hashes = j.value("models", std::map<std::string, std::string>{});
  r.summary = j.value("summary", nlohmann::json::object());
  return r;
}

void write_eval_report(const EvalReport& report, const std::filesystem::path& path) {
  write_file(path, report.to_json().dump(2) + "\n");
}

EvalReport read_eval_report(const std::filesystem::path& path) {
  try {
    return EvalReport::from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, path.string() + ": " + e.what());
  }
}

std::string model_config_hash(const std::filesystem::path& checkpoint_dir) {
  return config_hash(read_checkpoint(checkpoint_dir).manifest.config_snapshot);
}

}  // namespace sdgan

#include <doctest.h>

#include <cmath>
#include <random>

#include "sdgan/evaluation.hpp"
#include "sdgan/tensor_file.hpp"
#include "support.hpp"

using namespace sdgan;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_CASE("re-score arithmetic") {
  const ConfidenceTable before{{"pose", {0.9, 0.5}}, {"face_mask", {0.1, 0.2}}};
  const auto same = re_score(before, before, "face_mask");
  CHECK(same.retained.at("pose") == 0.0);
  CHECK(same.target_after == doctest::Approx(0.15));
  CHECK(same.n_samples == 2);

  const ConfidenceTable after{{"pose", {0.7, 0.5}}, {"face_mask", {0.95, 0.85}}};
  const auto r = re_score(before, after, "face_mask");
  CHECK(r.retained.at("pose") == doctest::Approx(0.1));
  CHECK(r.target_after == doctest::Approx(0.9));

  const ConfidenceTable before_swapped{{"pose", {0.5, 0.9}}, {"face_mask", {0.2, 0.1}}};
  const ConfidenceTable after_swapped{{"pose", {0.5, 0.7}}, {"face_mask", {0.85, 0.95}}};
  const auto p = re_score(before_swapped, after_swapped, "face_mask");
  CHECK(p.retained.at("pose") == doctest::Approx(r.retained.at("pose")));
  CHECK(p.target_after == doctest::Approx(r.target_after));

  CHECK(ReScoreReport::from_json(r.to_json()) == r);
  CHECK_THROWS_AS(re_score(before, after, "sun_glasses"), Error);
}

TEST_CASE("re-score length checks") {
  std::map<std::string, const AttributePredictor*> preds;
  const AttributePredictor det("face_mask", PredictorKind::BinaryPresence, ModelKind::Detector, 32, 1);
  preds["face_mask"] = &det;
  std::mt19937_64 rng(1);
  const std::vector<ImageTensor> one{testing::random_image(rng)};
  CHECK_THROWS_WITH_AS(re_score(preds, one, {}, "face_mask", {}), doctest::Contains("LengthMismatch"), Error);
  CHECK_THROWS_WITH_AS(re_score(preds, one, one, "face_mask", {"hue"}), doctest::Contains("MissingPredictor"), Error);
}

TEST_CASE("decoupling cosines") {
  const auto m = decoupling_matrix({{"a", vec({1, 0, 0})}, {"b", vec({0, 1, 0})}, {"c", vec({1, 1, 0})}});
  CHECK(m.cos(0, 1) == doctest::Approx(0.0));
  CHECK(m.cos(0, 2) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
  for (int i = 0; i < 3; ++i) {
    CHECK(m.cos(i, i) == doctest::Approx(1.0));
    for (int j = 0; j < 3; ++j) CHECK(m.cos(i, j) == m.cos(j, i));
  }
  CHECK(m.max_off_diagonal() == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(DecouplingMatrix::from_json(m.to_json()) == m);

  CHECK_THROWS_WITH_AS(decoupling_matrix({{"a", vec({1, 0})}, {"z", vec({0, 0})}}), doctest::Contains("ZeroVector"),
                       Error);
  CHECK_THROWS_AS(decoupling_matrix({{"a", vec({1, 0})}}), Error);
  CHECK_THROWS_AS(decoupling_matrix({{"a", vec({1, 0})}, {"b", vec({1, 0, 0})}}), Error);
}

TEST_CASE("edit directions") {
  GeneratorModel gen(GeneratorConfig{}, 2);
  gen.freeze();
  std::mt19937_64 rng(2);
  const Fusion fusion(FusionConfig{}, 2);
  const auto attr = sprite::accessory_image("face_mask", 32);
  const SemanticBasis basis{"face_mask", normalize_direction(standard_normal(64, rng)), 2.4f};

  const auto b = edit_direction_for_method({}, fusion, attr, basis, DirectionMode::BasisOnly);
  CHECK((b.array() == (basis.length * basis.direction).array()).all());
  CHECK_THROWS_WITH_AS(edit_direction_for_method({}, fusion, attr, basis, DirectionMode::MeanAdjusted),
                       doctest::Contains("EmptySamples"), Error);

  const auto w = gen.map_latent({standard_normal(64, rng), LatentSpace::Z});
  const EditInput in{w, gen.synthesize(w), sprite::render_base_face(sprite::random_spec(2), 32).maps};
  const auto one = edit_direction_for_method({in}, fusion, attr, basis, DirectionMode::MeanAdjusted);
  const auto n_a = forward_edit(gen, fusion, basis, w, in.face_image, attr, in.maps).n_a;
  REQUIRE(one.size() == 8 * 64);
  CHECK((one - Eigen::Map<const VectorX<float>>(n_a.data(), n_a.size())).cwiseAbs().maxCoeff() <= 1e-7f);

  const auto many = edit_direction_for_method({in, in, in, in, in}, fusion, attr, basis, DirectionMode::MeanAdjusted);
  CHECK((many - one).cwiseAbs().maxCoeff() <= 1e-7f);

  CHECK(direction_mode_from_string(to_string(DirectionMode::MeanAdjusted)) == DirectionMode::MeanAdjusted);
}

TEST_CASE("interpolation frames") {
  GeneratorModel gen(GeneratorConfig{}, 3);
  gen.freeze();
  std::mt19937_64 rng(3);
  const auto w = gen.map_latent({standard_normal(64, rng), LatentSpace::Z});
  ExtendedLatent<float> n_a(8, 64);
  for (Eigen::Index i = 0; i < n_a.size(); ++i) n_a.data()[i] = static_cast<float>(standard_normal(1, rng)(0));

  const auto two = interpolate_edit(gen, w, n_a, 2);
  REQUIRE(two.size() == 2);
  CHECK(testing::bitwise_equal(two[0], gen.synthesize(w)));
  CHECK(testing::bitwise_equal(two[1], gen.synthesize(apply_edit_latent(w, n_a))));

  const auto flat = interpolate_edit(gen, w, ExtendedLatent<float>::Zero(8, 64), 5);
  REQUIRE(flat.size() == 5);
  for (const auto& f : flat) CHECK(testing::bitwise_equal(f, flat[0]));

  CHECK_THROWS_WITH_AS(interpolate_edit(gen, w, n_a, 1), doctest::Contains("InvalidSteps"), Error);

  CHECK(monotonic_violations({0.1, 0.2, 0.3}) == 0);
  CHECK(monotonic_violations({0.1, 0.3, 0.2, 0.4, 0.35}) == 2);
}

TEST_CASE("evaluation report documents") {
  testing::TempDir dir("eval");
  const EvalReport empty;
  write_eval_report(empty, dir / "empty.json");
  const auto back = read_eval_report(dir / "empty.json");
  CHECK(back == empty);
  const auto j = nlohmann::json::parse(read_file(dir / "empty.json"));
  for (const char* k : {"re_score", "decoupling", "interpolation", "models", "summary"}) CHECK(j.contains(k));

  EvalReport r;
  r.re_scores.push_back(re_score({{"pose", {0.9}}, {"face_mask", {0.1}}}, {{"pose", {0.7}}, {"face_mask", {0.9}}},
                                 "face_mask"));
  r.decoupling["basis_only"] = decoupling_matrix({{"a", vec({1, 0})}, {"b", vec({1, 1})}});
  r.interpolation.push_back({"face_mask", 3, {0.1, 0.5, 0.9}});
  r.summary = {{"success_rate", 0.5}};

  GeneratorModel gen(GeneratorConfig{}, 4);
  save_generator(gen, dir / "g");
  r.model_hashes["generator"] = model_config_hash(dir / "g");
  CHECK_FALSE(r.model_hashes["generator"].empty());
  CHECK(model_config_hash(dir / "g") == r.model_hashes["generator"]);

  write_eval_report(r, dir / "r.json");
  CHECK(read_eval_report(dir / "r.json") == r);
  CHECK(EvalReport::from_json(r.to_json()) == r);
  write_file(dir / "blocker", "x");
  CHECK_THROWS_WITH_AS(write_eval_report(r, dir / "blocker" / "r.json"), doctest::Contains("IoError"), Error);
}

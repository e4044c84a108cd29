#include <doctest.h>

#include <algorithm>
#include <random>

#include "sdgan/attribute_models.hpp"
#include "sdgan/generator.hpp"
#include "sdgan/prior_basis.hpp"
#include "support.hpp"

using namespace sdgan;

namespace {

AttributePredictor random_detector(std::uint64_t seed, const std::string& attr = "face_mask") {
  return AttributePredictor(attr, PredictorKind::BinaryPresence, ModelKind::Detector, 32, seed);
}

std::vector<ScoredLatent> scored(const std::vector<double>& confs) {
  std::vector<ScoredLatent> out;
  for (std::size_t i = 0; i < confs.size(); ++i) {
    VectorX<float> w = VectorX<float>::Zero(2);
    w(0) = static_cast<float>(i);
    out.push_back({i, {w}, confs[i]});
  }
  return out;
}

}  // namespace

TEST_CASE("zero-initialized binary model is undecided") {
  auto model = random_detector(1);
  testing::zero_params(model.params);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 5; ++t) CHECK(predict_confidence(model, testing::random_image(rng)) == 0.5);
}

TEST_CASE("confidence determinism and batching") {
  const auto model = random_detector(2);
  std::mt19937_64 rng(2);
  const auto img = testing::random_image(rng);
  CHECK(predict_confidence(model, img) == predict_confidence(model, img));

  CHECK(batch_confidences(model, {}).empty());
  CHECK(batch_confidences(model, {img}) == std::vector<double>{predict_confidence(model, img)});

  std::vector<ImageTensor> images;
  for (int i = 0; i < 64; ++i) images.push_back(testing::random_image(rng));
  const auto batch = batch_confidences(model, images);
  REQUIRE(batch.size() == 64);
  for (int i = 0; i < 64; ++i) CHECK(std::abs(batch[i] - predict_confidence(model, images[i])) <= 1e-6);

  auto reversed = images;
  std::reverse(reversed.begin(), reversed.end());
  const auto rb = batch_confidences(model, reversed);
  for (int i = 0; i < 64; ++i) CHECK(rb[63 - i] == batch[i]);
}

TEST_CASE("binary confidences stay in [0, 1]") {
  auto model = random_detector(3);
  for (auto& p : model.params.all()) p.value.data() *= 50.0f;
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    auto img = testing::random_image(rng);
    if (t % 2) img.data() *= 100.0f;
    const double c = predict_confidence(model, img);
    CHECK(c >= 0.0);
    CHECK(c <= 1.0);
  }
}

TEST_CASE("predictor input checks") {
  const auto model = random_detector(4);
  CHECK_THROWS_WITH_AS(predict_confidence(model, ImageTensor({3, 16, 16})), doctest::Contains("ResolutionMismatch"),
                       Error);
  CHECK_THROWS_WITH_AS(predict_confidence(model, ImageTensor({1, 32, 32})), doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("single-class training data") {
  std::mt19937_64 rng(5);
  LabeledImages data;
  for (int i = 0; i < 20; ++i) {
    data.images.push_back(testing::random_image(rng));
    data.labels.push_back(1.0);
  }
  CHECK_THROWS_WITH_AS(train_predictor(data, "face_mask", PredictorKind::BinaryPresence, ModelKind::Predictor, {}),
                       doctest::Contains("MissingLabels"), Error);
}

TEST_CASE("sample_scored_latents") {
  GeneratorModel gen(GeneratorConfig{}, 6);
  gen.freeze();
  const auto det = random_detector(6);
  CHECK(sample_scored_latents(gen, det, 0, 1).empty());

  const auto a = sample_scored_latents(gen, det, 6, 9), b = sample_scored_latents(gen, det, 6, 9);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].index == i);
    CHECK(a[i].conf == b[i].conf);
    CHECK((a[i].w.values.array() == b[i].w.values.array()).all());
  }
  for (std::size_t i : {0u, 3u, 5u}) {
    const auto w = gen.map_latent({sample_z(64, 9, i), LatentSpace::Z});
    CHECK(std::abs(predict_confidence(det, gen.synthesize(w)) - a[i].conf) <= 1e-6);
  }
}

TEST_CASE("select_extremes") {
  auto l = select_extremes(scored({0.9, 0.1, 0.8, 0.2}), 1, 1);
  REQUIRE(l.y.size() == 2);
  CHECK(l.source == std::vector<std::size_t>{0, 1});
  CHECK(l.y == std::vector<int>{1, -1});

  l = select_extremes(scored({0.5, 0.5, 0.5, 0.5}), 2, 2);
  CHECK(l.source == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK(l.y == std::vector<int>{1, 1, -1, -1});

  CHECK_THROWS_WITH_AS(select_extremes(scored({0.1, 0.2, 0.3}), 2, 2), doctest::Contains("InsufficientSamples"), Error);
}

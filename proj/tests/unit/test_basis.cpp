#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "sdgan/prior_basis.hpp"
#include "support.hpp"

using namespace sdgan;

namespace {

LabeledLatents fixture_2d() {
  LabeledLatents l;
  const auto add = [&](float a, float b, int y) {
    VectorX<float> x(2);
    x << a, b;
    l.x.push_back(x);
    l.y.push_back(y);
    l.source.push_back(l.source.size());
  };
  add(1.0f, 0.1f, 1);
  add(1.0f, -0.1f, 1);
  add(-1.0f, 0.1f, -1);
  add(-1.0f, -0.1f, -1);
  return l;
}

// Unit direction maximizing the hard margin (best bias per direction) over a
// uniform angle scan.
Eigen::Vector2d brute_force_max_margin(const LabeledLatents& l, int steps) {
  double best = -1e300;
  Eigen::Vector2d best_u;
  for (int k = 0; k < steps; ++k) {
    const double t = 2.0 * std::numbers::pi * k / steps;
    const Eigen::Vector2d u(std::cos(t), std::sin(t));
    double min_pos = 1e300, max_neg = -1e300;
    for (std::size_t i = 0; i < l.x.size(); ++i) {
      const double p = u.dot(l.x[i].cast<double>());
      if (l.y[i] > 0)
        min_pos = std::min(min_pos, p);
      else
        max_neg = std::max(max_neg, p);
    }
    if (min_pos - max_neg > best) {
      best = min_pos - max_neg;
      best_u = u;
    }
  }
  return best_u;
}

ScoreFn constant_score(double value) {
  return [value](double eta) { return make_breakdown(eta, value, 0.0, 0.0, 10.0); };
}

}  // namespace

TEST_CASE("fit_boundary on the separable 2-D fixture") {
  const auto data = fixture_2d();
  const auto fit = fit_boundary(data, {}, "toy");
  const Eigen::Vector2d oracle = brute_force_max_margin(data, 200000);
  const Eigen::Vector2d got = fit.basis.direction.cast<double>();
  CHECK(got.norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK((got - oracle).norm() <= 1e-3);
  CHECK(fit.basis.length == 0.0f);
  CHECK(fit.basis.attribute_id == "toy");
  CHECK(fit.train_accuracy == 1.0);
}

TEST_CASE("fit_boundary orientation and single class") {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> g(0.0f, 1.0f);
  LabeledLatents l;
  VectorX<float> axis = VectorX<float>::Zero(16);
  axis(2) = 1.0f;
  axis(5) = -1.0f;
  for (int i = 0; i < 200; ++i) {
    VectorX<float> x(16);
    for (auto& v : x) v = g(rng);
    const int y = x.dot(axis) > 0 ? 1 : -1;
    l.x.push_back(x);
    l.y.push_back(y);
    l.source.push_back(i);
  }
  const auto fit = fit_boundary(l);
  double pos = 0, neg = 0;
  int np = 0, nn = 0;
  for (std::size_t i = 0; i < l.x.size(); ++i) {
    const double s = signed_distance(fit.basis, l.x[i]);
    (l.y[i] > 0 ? pos : neg) += s;
    (l.y[i] > 0 ? np : nn) += 1;
  }
  CHECK(pos / np > neg / nn);
  CHECK(fit.basis.direction.cast<double>().dot(axis.cast<double>().normalized()) > 0.9);

  for (auto& y : l.y) y = 1;
  CHECK_THROWS_WITH_AS(fit_boundary(l), doctest::Contains("SingleClass"), Error);
}

TEST_CASE("masked terms hand oracle") {
  Tensor<float> a({1, 2, 2}), b({1, 2, 2});
  a[0] = 3.0f;
  RegionMask m(2, 2);
  m.at(0, 0) = 1;
  const auto [inside, outside] = masked_terms(a, b, m, MaskedReduction::Mean);
  CHECK(inside == 9.0);
  CHECK(outside == 0.0);
}

TEST_CASE("score_edit boundary cases") {
  GeneratorModel gen(GeneratorConfig{}, 1);
  gen.freeze();
  const AttributePredictor det("face_mask", PredictorKind::BinaryPresence, ModelKind::Detector, 32, 2);
  std::mt19937_64 rng(1);
  const auto w = gen.map_latent({standard_normal(64, rng), LatentSpace::Z});
  const auto dir = normalize_direction(standard_normal(64, rng));
  RegionMask m(32, 32);
  for (int y = 20; y < 28; ++y)
    for (int x = 8; x < 24; ++x) m.at(y, x) = 1;

  const auto zero = score_edit(gen, det, w, dir, 0.0, m);
  CHECK(zero.inside_term == 0.0);
  CHECK(zero.outside_term == 0.0);
  CHECK(zero.total == predict_confidence(det, gen.synthesize(w)));

  const auto no_lambda = score_edit(gen, det, w, dir, 3.0, m, 0.0);
  CHECK(no_lambda.total == no_lambda.det_term);
  CHECK(no_lambda.inside_term > 0.0);

  const EditScorer scorer(gen, det, w, dir, m);
  for (double eta : {0.0, 1.4, 6.2}) {
    const auto s = scorer(eta);
    const auto d = score_edit(gen, det, w, dir, eta, m);
    CHECK(s.total == d.total);
    CHECK(std::abs(s.total - s.recompose()) <= 1e-9);
  }
}

TEST_CASE("grid spec") {
  const GridSpec g;
  CHECK(g.count() == 51);
  CHECK(g.at(0) == 0.0);
  CHECK(g.at(50) == doctest::Approx(10.0).epsilon(1e-12));
  const auto p = GridSpec::parse("0:10:0.2");
  CHECK(p.count() == 51);
  CHECK(GridSpec::parse(p.to_string()).count() == 51);
  CHECK_THROWS_AS(GridSpec::parse("0-10-0.2"), Error);
  CHECK_THROWS_AS(GridSpec::parse("0:10:0"), Error);
}

TEST_CASE("length search on injected scores") {
  SemanticBasis dir{"x", VectorX<float>::Unit(4, 0), 0.0f};

  const auto peaked = search_optimal_length(
      [](double eta) { return make_breakdown(eta, 1.0 - (eta - 2.0) * (eta - 2.0), 0.0, 0.0, 10.0); }, dir);
  CHECK(peaked.eta_m == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(peaked.basis.length == doctest::Approx(2.0f));
  CHECK(peaked.breakdowns.size() == 51);

  const auto flat = search_optimal_length(constant_score(0.3), dir);
  CHECK(flat.eta_m == 0.0);
  CHECK(flat.breakdowns.size() == 51);
}

TEST_CASE("breakdowns recompose and the argmax ignores list order") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<ScoreBreakdown> list;
  for (double eta : GridSpec{}.points()) {
    const auto b = make_breakdown(eta, u(rng), 0.01 * u(rng), 0.001 * u(rng), 10.0);
    CHECK(std::abs(b.total - b.recompose()) <= 1e-9);
    list.push_back(b);
  }
  list[7].total = list[31].total = 5.0;  // tie: the smaller eta wins
  const double expect = list[argmax_total(list)].eta;
  CHECK(expect == list[7].eta);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(list.begin(), list.end(), rng);
    CHECK(list[argmax_total(list)].eta == expect);
  }
}

TEST_CASE("region masks from images") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto spec = sprite::random_spec(seed);
    const auto img = sprite::render_base_face(spec, 32).image;
    for (const auto& a : sprite::discrete_attributes()) {
      const auto m = attribute_region_mask(img, a);
      CHECK(m == attribute_region_mask(img, a));
      CHECK(m.area_fraction() >= 0.05);
      CHECK(m.area_fraction() <= 0.5);
    }
  }
  const auto img = sprite::render_base_face(sprite::FaceSpec{}, 32).image;
  CHECK_THROWS_WITH_AS(attribute_region_mask(img, "hat"), doctest::Contains("UnknownAttribute"), Error);
}

TEST_CASE("face spec estimation recovers rendered faces") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto spec = sprite::random_spec(seed);
    spec.attributes.clear();
    const auto est = estimate_face_spec(sprite::render_base_face(spec, 32).image);
    CHECK(est.face_hue == doctest::Approx(spec.face_hue).epsilon(0.05));
    CHECK(std::abs(est.brightness - spec.brightness) <= 0.05);
    CHECK(std::abs(est.face_scale - spec.face_scale) <= 0.03);
  }
}

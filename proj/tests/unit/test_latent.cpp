#include <doctest.h>

#include <random>

#include "sdgan/latent.hpp"
#include "support.hpp"

using namespace sdgan;

namespace {

VectorX<float> random_vector(int n, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  VectorX<float> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

ExtendedLatent<float> random_extended(int L, int d, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  ExtendedLatent<float> m(L, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

}  // namespace

TEST_CASE("normalize_direction") {
  VectorX<double> v(2);
  v << 3, 4;
  const auto n = normalize_direction(v);
  CHECK(n(0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n(1) == doctest::Approx(0.8).epsilon(1e-15));

  VectorX<float> axis = VectorX<float>::Zero(64);
  axis(1) = 5.0f;
  const auto a = normalize_direction(axis);
  for (int i = 0; i < 64; ++i) CHECK(a(i) == (i == 1 ? 1.0f : 0.0f));

  try {
    normalize_direction(VectorX<float>::Zero(64));
    FAIL("expected ZeroVector");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ZeroVector);
  }
}

TEST_CASE("normalize_direction is idempotent") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto once = normalize_direction(random_vector(64, rng));
    const auto twice = normalize_direction(once);
    CHECK((once - twice).cwiseAbs().maxCoeff() <= 1e-7f);
    CHECK(once.cast<double>().norm() == doctest::Approx(1.0).epsilon(1e-7));
  }
}

TEST_CASE("broadcast_to_extended") {
  VectorX<float> w(64);
  for (int i = 0; i < 64; ++i) w(i) = static_cast<float>(i + 1);
  const auto x = broadcast_to_extended(LatentCode<float>{w}, 8);
  REQUIRE(x.rows() == 8);
  REQUIRE(x.cols() == 64);
  for (int r = 0; r < 8; ++r) CHECK((x.row(r).transpose().array() == w.array()).all());

  const auto z = broadcast_to_extended(LatentCode<float>{VectorX<float>::Zero(64)}, 8);
  CHECK((z.array() == 0.0f).all());

  std::mt19937_64 rng(1);
  const auto r = random_vector(64, rng);
  const auto b = broadcast_to_extended(LatentCode<float>{r}, 8);
  CHECK(std::memcmp(VectorX<float>(b.row(0).transpose()).data(), r.data(), 64 * sizeof(float)) == 0);

  CHECK_THROWS_AS(broadcast_to_extended(LatentCode<float>{r, LatentSpace::Z}, 8), Error);
}

TEST_CASE("compose_adjustment") {
  SemanticBasis basis{"face_mask", VectorX<float>::Zero(64), 2.0f};
  basis.direction(1) = 1.0f;

  SUBCASE("zero offset gives eta times direction on every row") {
    const auto out = compose_adjustment(ExtendedLatent<float>(ExtendedLatent<float>::Zero(8, 64)), basis);
    for (int r = 0; r < 8; ++r) CHECK((out.row(r).transpose().array() == basis.vector().array()).all());
  }
  SUBCASE("zero length returns the offset bitwise") {
    std::mt19937_64 rng(2);
    const auto off = random_extended(8, 64, rng);
    SemanticBasis zero = basis;
    zero.length = 0.0f;
    const auto out = compose_adjustment(off, zero);
    CHECK(std::memcmp(out.data(), off.data(), off.size() * sizeof(float)) == 0);
  }
  SUBCASE("hand vector addition") {
    ExtendedLatent<float> off = ExtendedLatent<float>::Zero(8, 64);
    off.col(0).setOnes();
    const auto out = compose_adjustment(off, basis);
    for (int r = 0; r < 8; ++r) {
      CHECK(out(r, 0) == 1.0f);
      CHECK(out(r, 1) == 2.0f);
      CHECK(out.row(r).tail(62).isZero());
    }
  }
  SUBCASE("width mismatch") {
    CHECK_THROWS_AS(compose_adjustment(ExtendedLatent<float>(ExtendedLatent<float>::Zero(8, 32)), basis), Error);
  }
}

TEST_CASE("compose_adjustment of zero has equal rows for any basis") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    SemanticBasis b{"x", normalize_direction(random_vector(64, rng)), static_cast<float>(t) * 0.7f};
    const auto out = compose_adjustment(ExtendedLatent<float>(ExtendedLatent<float>::Zero(8, 64)), b);
    for (int r = 1; r < 8; ++r) CHECK((out.row(r).array() == out.row(0).array()).all());
  }
}

TEST_CASE("apply_edit_latent") {
  std::mt19937_64 rng(7);
  const LatentCode<float> w{random_vector(64, rng)};
  const auto zero = apply_edit_latent(w, ExtendedLatent<float>(ExtendedLatent<float>::Zero(8, 64)));
  const auto bw = broadcast_to_extended(w, 8);
  CHECK(std::memcmp(zero.data(), bw.data(), bw.size() * sizeof(float)) == 0);

  const auto n_a = random_extended(8, 64, rng);
  const auto from_zero = apply_edit_latent(LatentCode<float>{VectorX<float>::Zero(64)}, n_a);
  CHECK((from_zero.array() == n_a.array()).all());

  SUBCASE("commutes with compose_adjustment") {
    const auto n_o = random_extended(8, 64, rng);
    SemanticBasis b{"x", normalize_direction(random_vector(64, rng)), 1.6f};
    const auto lhs = apply_edit_latent(w, compose_adjustment(n_o, b));
    const ExtendedLatent<float> rhs = apply_edit_latent(w, n_o) + broadcast_to_extended(LatentCode<float>{b.vector()}, 8);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-5f);
  }
}

TEST_CASE("composition and edit are linear") {
  std::mt19937_64 rng(11);
  using D = double;
  for (int t = 0; t < 10; ++t) {
    ExtendedLatent<D> a = random_extended(4, 6, rng).cast<D>(), b = random_extended(4, 6, rng).cast<D>();
    LatentCode<D> w1{random_vector(6, rng).cast<D>()}, w2{random_vector(6, rng).cast<D>()};
    const D s = 0.37;
    const ExtendedLatent<D> lhs = apply_edit_latent(LatentCode<D>{w1.values + s * w2.values}, ExtendedLatent<D>(a + s * b));
    const ExtendedLatent<D> rhs = apply_edit_latent(w1, a) + s * apply_edit_latent(w2, b);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);

    // Basis side: compose(a, len*dir) is affine in the offset and linear in the length.
    SemanticBasis unit{"x", normalize_direction(random_vector(6, rng)), 1.0f};
    SemanticBasis twice = unit;
    twice.length = 2.0f;
    const ExtendedLatent<D> zero = ExtendedLatent<D>::Zero(4, 6);
    const ExtendedLatent<D> c1 = compose_adjustment(zero, unit), c2 = compose_adjustment(zero, twice);
    CHECK((c2 - 2.0 * c1).cwiseAbs().maxCoeff() <= 1e-6);
    const ExtendedLatent<D> ca = compose_adjustment(a, unit), cb = compose_adjustment(b, unit);
    const ExtendedLatent<D> cab = compose_adjustment(ExtendedLatent<D>(a + b), twice);
    CHECK((cab - (ca + cb)).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "sdgan/generator.hpp"
#include "support.hpp"

using namespace sdgan;
using sdgan::testing::TempDir;

namespace {

LatentCode<float> random_z(std::mt19937_64& rng, int d = 64) { return {standard_normal(d, rng), LatentSpace::Z}; }

}  // namespace

TEST_CASE("map_latent contracts") {
  GeneratorModel gen(GeneratorConfig{}, 3);
  std::mt19937_64 rng(1);
  const auto z = random_z(rng);
  const auto a = gen.map_latent(z), b = gen.map_latent(z);
  CHECK(a.space == LatentSpace::W);
  CHECK(a.dim() == 64);
  CHECK(std::memcmp(a.values.data(), b.values.data(), 64 * sizeof(float)) == 0);

  for (auto& p : gen.params().all())
    if (p.name.rfind("map.", 0) == 0) p.value.data().setZero();
  CHECK(gen.map_latent(z).values.isZero(0.0f));

  CHECK_THROWS_AS(gen.map_latent({VectorX<float>::Zero(32), LatentSpace::Z}), Error);
}

TEST_CASE("synthesize contracts") {
  const GeneratorConfig cfg;
  GeneratorModel gen(cfg, 5);
  std::mt19937_64 rng(2);
  const auto w = gen.map_latent(random_z(rng));
  const auto img = gen.synthesize(w);
  CHECK(img.shape() == Shape{3, 32, 32});
  CHECK(testing::bitwise_equal(img, gen.synthesize(w)));
  CHECK(img.data().minCoeff() >= 0.0f);
  CHECK(img.data().maxCoeff() <= 1.0f);

  SUBCASE("reproducible from a saved checkpoint") {
    TempDir dir("gen");
    save_generator(gen, dir / "g");
    const auto again = load_generator(dir / "g", cfg);
    CHECK(testing::bitwise_equal(again.synthesize(w), img));
  }

  SUBCASE("rows are style inputs") {
    CHECK_THROWS_AS(gen.synthesize(ExtendedLatent<float>::Zero(7, 64)), Error);
  }
}

TEST_CASE("map, broadcast and synthesize wire the same path as the graph") {
  GeneratorModel gen(GeneratorConfig{}, 8);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 5; ++t) {
    const auto z = random_z(rng);
    nn::Graph<float> g(false);
    const auto direct = gen.synthesize_w(g, gen.map(g, g.input(Tensor<float>({64}, z.values)))).value();
    const auto staged = gen.synthesize(broadcast_to_extended(gen.map_latent(z), 8));
    CHECK(testing::bitwise_equal(direct, staged));
  }
}

TEST_CASE("generator training failure contracts") {
  const GeneratorConfig cfg;
  GeneratorTrainConfig tc;
  tc.steps = 3;
  tc.batch_size = 2;

  sprite::Dataset empty;
  empty.resolution = 32;
  CHECK_THROWS_WITH_AS(train_generator(empty, cfg, tc), doctest::Contains("EmptyDataset"), Error);

  auto ds = sprite::generate_dataset(4, 1, {}, 32);
  for (auto& s : ds.samples) {
    s.image_base.data().setConstant(std::numeric_limits<float>::quiet_NaN());
    s.image_gt.data().setConstant(std::numeric_limits<float>::quiet_NaN());
  }
  TempDir dir("gen");
  try {
    auto r = train_generator(ds, cfg, tc);
    save_generator(r.model, dir / "g");
    FAIL("expected DivergenceDetected");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DivergenceDetected);
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(dir / "g"));
}

TEST_CASE("latent plan decodes flags independently") {
  std::mt19937_64 rng(6);
  for (const std::set<std::string>& want :
       {std::set<std::string>{}, {"face_mask"}, {"frame_glasses", "sun_glasses"}, {"face_mask", "sun_glasses"}}) {
    for (int t = 0; t < 20; ++t) {
      const auto z = LatentPlan::sample_with_attributes(want, 64, rng);
      CHECK(LatentPlan::decode(z).attributes == want);
    }
  }
  const auto spec = sprite::random_spec(3);
  const auto z = LatentPlan::encode(spec, 64, rng);
  const auto back = LatentPlan::decode(z);
  CHECK(back.face_hue == doctest::Approx(spec.face_hue).epsilon(1e-5));
  CHECK(back.face_scale == doctest::Approx(spec.face_scale).epsilon(1e-5));
  CHECK(back.attributes == spec.attributes);
}

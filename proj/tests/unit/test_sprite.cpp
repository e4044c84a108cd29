#include <doctest.h>

#include <fstream>

#include "sdgan/sprite.hpp"
#include "support.hpp"

using namespace sdgan;
using sdgan::testing::TempDir;
namespace fs = std::filesystem;

TEST_CASE("render_base_face is pure") {
  const auto spec = sprite::random_spec(11);
  const auto a = sprite::render_base_face(spec, 32), b = sprite::render_base_face(spec, 32);
  CHECK(testing::bitwise_equal(a.image, b.image));
  CHECK(testing::bitwise_equal(a.maps.normal, b.maps.normal));
  CHECK(testing::bitwise_equal(a.maps.diffuse, b.maps.diffuse));
  CHECK(testing::bitwise_equal(a.maps.albedo, b.maps.albedo));
  CHECK(a.maps.stacked().shape() == Shape{9, 32, 32});
}

TEST_CASE("centred face is left-right symmetric") {
  sprite::FaceSpec spec;
  spec.pose_shift = 0.0;
  for (double hue : {0.1, 0.5, 0.9}) {
    spec.face_hue = hue;
    const auto img = sprite::render_base_face(spec, 32).image;
    double worst = 0.0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) worst = std::max(worst, std::abs(double(img.at(c, y, x)) - img.at(c, y, 31 - x)));
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("diffuse map scales with brightness") {
  sprite::FaceSpec dim, bright;
  dim.brightness = 0.5;
  bright.brightness = 1.0;
  const auto a = sprite::render_base_face(dim, 32).maps.diffuse;
  const auto b = sprite::render_base_face(bright, 32).maps.diffuse;
  int lit = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (b[i] < 0.05f) continue;
    ++lit;
    CHECK(a[i] / b[i] == doctest::Approx(0.5).epsilon(1e-5));
  }
  CHECK(lit > 100);
}

TEST_CASE("apply_discrete_attribute") {
  sprite::FaceSpec spec;
  const auto base = sprite::render_base_face(spec, 32).image;
  const auto mask = sprite::apply_discrete_attribute(base, spec, "face_mask");
  CHECK(mask.footprint.area_fraction() >= 0.10);
  CHECK(mask.footprint.area_fraction() <= 0.35);

  // Lower face: the footprint's centroid sits below the image centre.
  double cy = 0.0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) cy += y * mask.footprint.at(y, x);
  CHECK(cy / static_cast<double>(mask.footprint.area()) > 16.0);

  for (const auto& a : sprite::discrete_attributes()) {
    const auto out = sprite::apply_discrete_attribute(base, spec, a);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          if (!out.footprint.at(y, x)) CHECK(out.image.at(c, y, x) == base.at(c, y, x));
  }

  CHECK_THROWS_WITH_AS(sprite::apply_discrete_attribute(base, spec, "hat"), doctest::Contains("UnknownAttribute"),
                       Error);
}

TEST_CASE("paired samples differ only inside the region mask") {
  const auto ds = sprite::generate_dataset(1000, 21, {{"face_mask", 0.34}, {"frame_glasses", 0.33}, {"sun_glasses", 0.33}}, 32);
  std::size_t mismatches = 0, with_attribute = 0;
  for (const auto& s : ds.samples) {
    CHECK(s.region_mask.height == 32);
    CHECK(s.region_mask.width == 32);
    CHECK(s.shape_maps.stacked().shape() == Shape{9, 32, 32});
    with_attribute += !s.attribute_id.empty();
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          if (!s.region_mask.at(y, x) && s.image_gt.at(c, y, x) != s.image_base.at(c, y, x)) ++mismatches;
  }
  CHECK(mismatches == 0);
  CHECK(with_attribute > 900);
}

TEST_CASE("generate_dataset") {
  const auto a = sprite::generate_dataset(100, 7, {{"face_mask", 0.5}}, 32);
  const auto b = sprite::generate_dataset(100, 7, {{"face_mask", 0.5}}, 32);
  CHECK(a.manifest() == b.manifest());
  for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(testing::bitwise_equal(a.samples[i].image_gt, b.samples[i].image_gt));

  const auto small = sprite::generate_dataset(10, 7, {{"face_mask", 0.5}}, 32);
  int masked = 0;
  for (const auto& s : small.samples) masked += s.attribute_id == "face_mask";
  CHECK(masked >= 3);
  CHECK(masked <= 7);

  CHECK_THROWS_WITH_AS(sprite::generate_dataset(10, 7, {{"face_mask", 0.6}, {"sun_glasses", 0.6}}, 32),
                       doctest::Contains("InvalidMix"), Error);
}

TEST_CASE("dataset directory roundtrip") {
  TempDir dir("ds");
  const auto ds = sprite::generate_dataset(6, 3, {{"sun_glasses", 0.5}}, 32);
  sprite::write_dataset(ds, dir / "d");
  for (const char* sub : {"images", "gt", "masks", "maps"}) CHECK(fs::is_directory(dir / "d" / sub));
  const auto back = sprite::read_dataset(dir / "d");
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].spec == ds.samples[i].spec);
    CHECK(back.samples[i].attribute_id == ds.samples[i].attribute_id);
    CHECK(back.samples[i].region_mask == ds.samples[i].region_mask);
    // PNG stores 8 bits per channel.
    CHECK((back.samples[i].image_gt.data() - ds.samples[i].image_gt.data()).cwiseAbs().maxCoeff() <= 0.5f / 255.0f + 1e-6f);
  }
}

TEST_CASE("ingest_external") {
  TempDir dir("ingest");
  const auto img = sprite::render_base_face(sprite::FaceSpec{}, 32).image;
  fs::create_directories(dir / "with");
  fs::create_directories(dir / "without");
  save_png(dir / "with" / "a.png", img);
  save_png(dir / "with" / "b.png", img);
  save_png(dir / "without" / "c.png", img);
  auto m = sprite::ingest_external(dir.path());
  CHECK(m.entries.size() == 3);
  CHECK(m.skipped == 0);
  CHECK(m.entries[0].label == "with");
  CHECK(m.entries[2].label == "without");

  std::ofstream(dir / "with" / "notes.txt") << "hello";
  m = sprite::ingest_external(dir.path());
  CHECK(m.entries.size() == 3);
  CHECK(m.skipped == 1);
  CHECK(m.warnings.size() == 1);
  CHECK(m.to_json().dump().find("skipped") != std::string::npos);

  TempDir empty("ingest_empty");
  CHECK_THROWS_WITH_AS(sprite::ingest_external(empty.path()), doctest::Contains("EmptyDirectory"), Error);
}

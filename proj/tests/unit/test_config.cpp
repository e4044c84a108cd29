#include <doctest.h>

#include "sdgan/pipeline.hpp"
#include "sdgan/tensor_file.hpp"
#include "support.hpp"

using namespace sdgan;

TEST_CASE("app config roundtrip") {
  AppConfig c;
  c.training.lambda1 = 0.3;
  c.fusion_data.grid = GridSpec::parse("0:5:0.5");
  c.service.port = 9001;
  c.mix = {{"sun_glasses", 0.4}};
  const auto j = c.to_json();
  for (const char* k : {"dims", "paths", "training", "service"}) CHECK(j.contains(k));
  const auto back = AppConfig::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(back.training.lambda1 == 0.3);
  CHECK(back.fusion_data.grid.count() == 11);
  CHECK(back.service.port == 9001);

  testing::TempDir dir("cfg");
  write_file(dir / "c.json", j.dump(2));
  CHECK(AppConfig::load(dir / "c.json").to_json() == j);
  CHECK(AppConfig::from_json(nlohmann::json::object()).to_json() == AppConfig{}.to_json());
  CHECK_THROWS_AS(AppConfig::load(dir / "missing.json"), Error);
}

TEST_CASE("eta mode names") {
  for (auto m : {EtaMode::PerImage, EtaMode::Global, EtaMode::Disabled})
    CHECK(eta_mode_from_string(eta_mode_name(m)) == m);
  CHECK_THROWS_AS(eta_mode_from_string("sometimes"), Error);
}

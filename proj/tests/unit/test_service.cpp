#include <doctest.h>

#include <chrono>
#include <random>
#include <thread>

#include "sdgan/archive.hpp"
#include "sdgan/service.hpp"
#include "sdgan/tensor_file.hpp"
#include "support.hpp"

#include <httplib.h>

using namespace sdgan;
using json = nlohmann::json;

namespace {

std::shared_ptr<ModelBundle> random_bundle(std::uint64_t seed) {
  auto b = std::make_shared<ModelBundle>();
  GeneratorModel gen(GeneratorConfig{}, seed);
  gen.freeze();
  b->generator = std::move(gen);
  std::mt19937_64 rng(seed);
  const std::string a = "face_mask";
  b->detectors.emplace(a, AttributePredictor(a, PredictorKind::BinaryPresence, ModelKind::Detector, 32, seed));
  b->bases[a] = SemanticBasis{a, normalize_direction(standard_normal(64, rng)), 3.0f};
  b->fusions.emplace(a, Fusion(FusionConfig{}, seed));
  return b;
}

EditRequest fixed(const std::string& sample, double eta, bool zero_offset = false,
                  const std::string& attribute = "face_mask") {
  EditRequest r;
  r.sample_id = sample;
  r.attribute = attribute;
  r.eta = eta;
  r.zero_offset = zero_offset;
  return r;
}

std::string image_id(const json& ref) {
  const std::string s = ref.get<std::string>();
  return s.substr(7, s.size() - 11);  // "/image/<id>.png"
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST_CASE("sampling") {
  SessionState s(random_bundle(1), AppConfig{});
  const auto three = s.handle_sample(3);
  REQUIRE(three.size() == 3);
  CHECK(three[0]["sample_id"] != three[1]["sample_id"]);
  CHECK(three[1]["sample_id"] != three[2]["sample_id"]);
  for (const auto& e : three) CHECK(s.image_png(image_id(e["thumbnail_ref"])).has_value());
  CHECK(s.handle_sample(0).empty());
  CHECK(s.sample_count() == 3);

  const auto a = s.handle_sample(2, 42), b = s.handle_sample(2, 42);
  for (int i = 0; i < 2; ++i) {
    CHECK(a[i]["sample_id"] != b[i]["sample_id"]);
    CHECK(*s.image_png(image_id(a[i]["thumbnail_ref"])) == *s.image_png(image_id(b[i]["thumbnail_ref"])));
  }
  CHECK(kind_of([&] { s.handle_sample(1000); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("fixed-length edits") {
  const auto bundle = random_bundle(2);
  const auto before = bundle->generator->params().fingerprint();
  const auto fusion_before = bundle->fusions.at("face_mask").params().fingerprint();
  SessionState s(bundle, AppConfig{});
  const std::string id = s.handle_sample(1, 5)[0]["sample_id"];

  const auto identity = s.handle_edit(fixed(id, 0.0, true));
  CHECK(identity["eta_used"] == 0.0);
  CHECK(identity["mode"] == "fixed");
  CHECK(*s.image_png(image_id(identity["image_ref"])) == *s.image_png(image_id(identity["original_ref"])));

  const auto e = s.handle_edit(fixed(id, 4.0));
  CHECK(e["eta_used"] == 4.0);
  CHECK(*s.image_png(image_id(e["image_ref"])) != *s.image_png(image_id(e["original_ref"])));
  const auto rec = *s.edit(e["edit_id"]);
  CHECK(rec.n_a.rows() == 8);
  CHECK(((rec.n_a - rec.n_o).rowwise() - (4.0f * bundle->bases.at("face_mask").direction).transpose())
            .cwiseAbs()
            .maxCoeff() <= 1e-6f);
  CHECK(s.handle_edit(fixed(id, 4.0))["edit_id"] == e["edit_id"]);
  CHECK(s.edit_count() == 2);

  CHECK(kind_of([&] { s.handle_edit(fixed(id, 99.0)); }) == ErrorKind::EtaOutOfRange);
  CHECK(kind_of([&] { s.handle_edit(fixed(id, -0.2)); }) == ErrorKind::EtaOutOfRange);
  CHECK(kind_of([&] { s.handle_edit(fixed("s999999", 1.0)); }) == ErrorKind::UnknownSample);
  CHECK(kind_of([&] { s.handle_edit(fixed(id, 1.0, false, "hat")); }) == ErrorKind::UnknownAttribute);
  CHECK(kind_of([&] { s.handle_edit(fixed(id, 1.0, false, "sun_glasses")); }) == ErrorKind::ModelNotLoaded);

  CHECK(bundle->generator->params().fingerprint() == before);
  CHECK(bundle->fusions.at("face_mask").params().fingerprint() == fusion_before);
}

TEST_CASE("edit requests") {
  auto r = EditRequest::from_json({{"sample_id", "s000001"}, {"attribute", "face_mask"}, {"auto", true}});
  CHECK_FALSE(r.eta.has_value());
  r = EditRequest::from_json({{"sample_id", "s000001"}, {"attribute", "face_mask"}, {"eta", 2.2}});
  CHECK(*r.eta == 2.2);
  CHECK(kind_of([] {
          EditRequest::from_json({{"sample_id", "s1"}, {"attribute", "face_mask"}, {"eta", 1.0}, {"auto", true}});
        }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([] { EditRequest::from_json({{"attribute", "face_mask"}}); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("interpolation") {
  SessionState s(random_bundle(3), AppConfig{});
  const std::string id = s.handle_sample(1, 3)[0]["sample_id"];
  const auto e = s.handle_edit(fixed(id, 2.0));

  const auto two = s.handle_interpolate(e["edit_id"], 2);
  REQUIRE(two["frames"].size() == 2);
  CHECK(two["frames"][0] == e["original_ref"]);
  CHECK(two["frames"][1] == e["image_ref"]);

  const auto eight = s.handle_interpolate(e["edit_id"], 8);
  REQUIRE(eight["frames"].size() == 8);
  for (const auto& f : eight["frames"]) CHECK(s.image_png(image_id(f)).has_value());
  CHECK(s.handle_interpolate(e["edit_id"], 8) == eight);

  CHECK(kind_of([&] { s.handle_interpolate("e999999", 3); }) == ErrorKind::UnknownEdit);
  CHECK(kind_of([&] { s.handle_interpolate(e["edit_id"], 1); }) == ErrorKind::InvalidSteps);
}

TEST_CASE("attributes listing") {
  SessionState s(random_bundle(4), AppConfig{});
  const auto a = s.attributes();
  CHECK(a["grid_points"] == 51);
  CHECK(a["grid_min"] == 0.0);
  CHECK(a["grid_max"] == 10.0);
  CHECK(a["generator_loaded"] == true);
  REQUIRE(a["attributes"].size() == 3);
  for (const auto& e : a["attributes"]) CHECK(e["editable"] == (e["id"] == "face_mask"));

  SessionState empty(std::make_shared<ModelBundle>(), AppConfig{});
  CHECK(empty.attributes()["generator_loaded"] == false);
  CHECK(kind_of([&] { empty.handle_sample(1); }) == ErrorKind::ModelNotLoaded);
}

TEST_CASE("session export and import") {
  const auto bundle = random_bundle(5);
  SessionState s(bundle, AppConfig{});
  const std::string id = s.handle_sample(2, 8)[1]["sample_id"];
  s.handle_sample(1);
  const auto e = s.handle_edit(fixed(id, 1.6));
  s.handle_interpolate(e["edit_id"], 4);

  const auto bytes = s.export_archive();
  const auto entries = read_tar(bytes);
  std::map<std::string, std::string> files(entries.begin(), entries.end());
  REQUIRE(files.count("manifest.json"));
  const auto manifest = json::parse(files["manifest.json"]);
  CHECK(manifest["samples"].size() == 3);
  CHECK(manifest["edits"].size() == 1);
  CHECK(files.count("latents/" + id + ".w.sdgt"));
  CHECK(decode_tensor(files["latents/" + id + ".w.sdgt"]).shape() == Shape{64});
  CHECK(decode_tensor(files["edits/" + e["edit_id"].get<std::string>() + ".n_a.sdgt"]).shape() == Shape{8, 64});

  SessionState t(bundle, AppConfig{});
  t.import_archive(bytes);
  CHECK(t.export_archive() == bytes);
  CHECK(t.sample_count() == 3);
  CHECK(*t.image_png(image_id(e["image_ref"])) == *s.image_png(image_id(e["image_ref"])));
  // Counters carry over: the next ids continue where the exporter stopped.
  CHECK(t.handle_sample(1)[0]["sample_id"] == s.handle_sample(1)[0]["sample_id"]);

  SessionState blank(bundle, AppConfig{});
  const auto empty = blank.export_archive();
  SessionState u(bundle, AppConfig{});
  u.import_archive(empty);
  CHECK(u.sample_count() == 0);
  CHECK(u.export_archive() == empty);

  CHECK(kind_of([&] { u.import_archive("not a tar"); }) == ErrorKind::FormatError);
  testing::TempDir dir("svc");
  write_file(dir / "blocker", "x");
  CHECK(kind_of([&] { s.export_session(dir / "blocker" / "s.tar"); }) == ErrorKind::IoError);
  s.export_session(dir / "s.tar");
  CHECK(read_file(dir / "s.tar").size() == s.export_archive().size());
}

TEST_CASE("error kinds map to HTTP statuses") {
  CHECK(http_status(ErrorKind::UnknownSample) == 404);
  CHECK(http_status(ErrorKind::UnknownEdit) == 404);
  CHECK(http_status(ErrorKind::UnknownAttribute) == 404);
  CHECK(http_status(ErrorKind::ModelNotLoaded) == 503);
  CHECK(http_status(ErrorKind::EtaOutOfRange) == 400);
  CHECK(http_status(ErrorKind::InvalidSteps) == 400);
}

TEST_CASE("HTTP routes") {
  SessionState s(random_bundle(6), AppConfig{});
  httplib::Server server;
  register_routes(server, s);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client c("127.0.0.1", port);
  const auto post = [&](const std::string& path, const json& body) {
    return c.Post(path, body.dump(), "application/json");
  };

  auto r = post("/api/samples", {{"count", 2}, {"seed", 1}});
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto samples = json::parse(r->body)["samples"];
  REQUIRE(samples.size() == 2);
  const std::string id = samples[0]["sample_id"];

  r = c.Get(samples[0]["thumbnail_ref"].get<std::string>());
  REQUIRE(r);
  CHECK(r->status == 200);
  CHECK(r->get_header_value("Content-Type") == "image/png");
  CHECK(r->body.substr(1, 3) == "PNG");

  r = post("/api/edit", {{"sample_id", id}, {"attribute", "face_mask"}, {"eta", 2.0}});
  REQUIRE(r);
  CHECK(r->status == 200);
  const auto edit = json::parse(r->body);
  CHECK(edit["eta_used"] == 2.0);

  r = post("/api/edit", {{"sample_id", id}, {"attribute", "face_mask"}, {"eta", 99}});
  CHECK(r->status == 400);
  CHECK(json::parse(r->body)["error"] == "EtaOutOfRange");
  r = post("/api/edit", {{"sample_id", "s424242"}, {"attribute", "face_mask"}, {"eta", 1}});
  CHECK(r->status == 404);
  r = post("/api/edit", {{"sample_id", id}, {"attribute", "sun_glasses"}, {"eta", 1}});
  CHECK(r->status == 503);
  r = c.Post("/api/edit", "{not json", "application/json");
  CHECK(r->status == 400);

  r = post("/api/interpolate", {{"edit_id", edit["edit_id"]}, {"steps", 3}});
  CHECK(r->status == 200);
  CHECK(json::parse(r->body)["frames"].size() == 3);
  r = post("/api/interpolate", {{"edit_id", "e777777"}, {"steps", 3}});
  CHECK(r->status == 404);

  r = c.Get("/api/attributes");
  CHECK(r->status == 200);
  CHECK(json::parse(r->body)["grid_points"] == 51);

  r = c.Get("/image/nope.png");
  CHECK(r->status == 404);

  r = c.Get("/api/session/export");
  REQUIRE(r);
  CHECK(r->status == 200);
  const std::string archive = r->body;
  CHECK(archive == s.export_archive());
  r = c.Post("/api/session/import", archive, "application/x-tar");
  CHECK(r->status == 200);
  CHECK(s.export_archive() == archive);

  server.stop();
  th.join();
}

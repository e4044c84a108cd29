#include "sdgan/service.hpp"

#include <cstdio>
#include <random>

#include <httplib.h>

#include "sdgan/archive.hpp"
#include "sdgan/tensor_file.hpp"

namespace sdgan {

namespace {

using json = nlohmann::json;

constexpr std::uint64_t kUnseededStream = 0x5d6a11e5ULL;

std::string make_id(char prefix, std::uint64_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%06llu", prefix, static_cast<unsigned long long>(n));
  return buf;
}

std::uint64_t id_number(const std::string& id) {
  require(id.size() > 1, ErrorKind::FormatError, "malformed id '" + id + "'");
  return std::stoull(id.substr(1));
}

std::string image_ref(const std::string& image_id) { return "/image/" + image_id + ".png"; }

Tensor<float> vector_tensor(const VectorX<float>& v) { return Tensor<float>({static_cast<int>(v.size())}, v); }

Tensor<float> matrix_tensor(const ExtendedLatent<float>& m) {
  Tensor<float> t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t[r * m.cols() + c] = m(r, c);
  return t;
}

ExtendedLatent<float> tensor_matrix(const Tensor<float>& t) {
  require(t.rank() == 2, ErrorKind::FormatError, "edit latent must be rank 2");
  ExtendedLatent<float> m(t.dim(0), t.dim(1));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t[r * m.cols() + c];
  return m;
}

std::string edit_key(const std::string& sample, const std::string& attribute, std::optional<double> eta,
                     bool zero_offset) {
  char buf[64];
  if (eta)
    std::snprintf(buf, sizeof buf, "%.17g", *eta);
  else
    std::snprintf(buf, sizeof buf, "auto");
  return sample + "|" + attribute + "|" + buf + "|" + (zero_offset ? "0" : "1");
}

}  // namespace

EditRequest EditRequest::from_json(const json& j) {
  require(j.is_object(), ErrorKind::InvalidArgument, "edit request must be an object");
  EditRequest r;
  try {
    r.sample_id = j.at("sample_id").get<std::string>();
    r.attribute = j.at("attribute").get<std::string>();
    const bool is_auto = j.contains("auto") && j.at("auto").is_boolean() && j.at("auto").get<bool>();
    if (j.contains("eta") && !j.at("eta").is_null()) {
      require(!is_auto, ErrorKind::InvalidArgument, "give either eta or auto, not both");
      r.eta = j.at("eta").get<double>();
    }
    if (j.contains("zero_offset")) r.zero_offset = j.at("zero_offset").get<bool>();
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidArgument, std::string("bad edit request: ") + e.what());
  }
  return r;
}

SessionState::SessionState(std::shared_ptr<const ModelBundle> models, AppConfig config)
    : models_(std::move(models)), config_(std::move(config)) {
  require(models_ != nullptr, ErrorKind::InvalidArgument, "session needs a model bundle");
}

json SessionState::handle_sample(std::size_t count, std::optional<std::uint64_t> seed) {
  const auto& gen = models_->gen();
  require(count <= config_.service.max_count, ErrorKind::InvalidArgument,
          "count " + std::to_string(count) + " exceeds " + std::to_string(config_.service.max_count));
  std::uint64_t first_draw = 0;
  if (!seed) {
    std::lock_guard lock(mutex_);
    first_draw = unseeded_draws_;
    unseeded_draws_ += count;
  }

  struct Drawn {
    VectorX<float> z;
    LatentCode<float> w;
    std::string png;
  };
  std::vector<Drawn> drawn;
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(seed ? sprite::derive_seed(*seed, i) : sprite::derive_seed(kUnseededStream, first_draw + i));
    Drawn d;
    d.z = LatentPlan::sample_with_attributes({}, gen.config().latent_dim, rng);
    d.w = gen.map_latent({d.z, LatentSpace::Z});
    d.png = encode_png(gen.synthesize(d.w));
    drawn.push_back(std::move(d));
  }

  json out = json::array();
  std::lock_guard lock(mutex_);
  for (auto& d : drawn) {
    SampleRecord s{make_id('s', next_sample_++), std::move(d.z), std::move(d.w), ""};
    s.image_id = s.id;
    images_[s.image_id] = std::move(d.png);
    out.push_back({{"sample_id", s.id}, {"thumbnail_ref", image_ref(s.image_id)}});
    samples_.emplace(s.id, std::move(s));
  }
  return out;
}

const SemanticBasis& SessionState::edit_basis(const std::string& attribute) const {
  require(sprite::is_discrete_attribute(attribute), ErrorKind::UnknownAttribute,
          "'" + attribute + "' is not an editable attribute");
  models_->fusion(attribute);
  return models_->basis(attribute);
}

json SessionState::edit_json(const EditRecord& e) const {
  json j = {{"edit_id", e.id},
            {"sample_id", e.sample_id},
            {"attribute", e.attribute},
            {"image_ref", image_ref(e.image_id)},
            {"original_ref", image_ref(samples_.at(e.sample_id).image_id)},
            {"eta_used", e.eta_used},
            {"mode", e.auto_search ? "auto" : "fixed"},
            {"zero_offset", e.zero_offset}};
  if (e.auto_search) {
    json b = json::array();
    for (const auto& s : e.breakdowns) b.push_back(s.to_json());
    j["score_breakdowns"] = std::move(b);
  }
  return j;
}

json SessionState::handle_edit(const EditRequest& request) {
  const auto& gen = models_->gen();
  const bool zero_offset = request.zero_offset.value_or(config_.service.zero_offset);
  const GridSpec& grid = config_.fusion_data.grid;
  if (request.eta)
    require(std::isfinite(*request.eta) && *request.eta >= grid.lo && *request.eta <= grid.hi,
            ErrorKind::EtaOutOfRange,
            "eta " + std::to_string(*request.eta) + " outside [" + std::to_string(grid.lo) + ", " +
                std::to_string(grid.hi) + "]");

  const std::string key = edit_key(request.sample_id, request.attribute, request.eta, zero_offset);
  SampleRecord sample;
  {
    std::lock_guard lock(mutex_);
    auto it = samples_.find(request.sample_id);
    require(it != samples_.end(), ErrorKind::UnknownSample, "no sample '" + request.sample_id + "'");
    if (auto hit = edit_cache_.find(key); hit != edit_cache_.end()) return edit_json(edits_.at(hit->second));
    sample = it->second;
  }
  SemanticBasis basis = edit_basis(request.attribute);
  const Fusion& fusion = models_->fusion(request.attribute);

  EditRecord e;
  e.sample_id = sample.id;
  e.attribute = request.attribute;
  e.zero_offset = zero_offset;
  const ImageTensor face = gen.synthesize(sample.w);
  if (request.eta) {
    e.eta_used = *request.eta;
  } else {
    e.auto_search = true;
    const RegionMask region = attribute_region_mask(face, request.attribute, config_.fusion_data.region_mode);
    auto found = search_optimal_length(gen, models_->detector(request.attribute), sample.w, basis, region, grid,
                                       config_.fusion_data.lambda);
    e.eta_used = found.eta_m;
    e.breakdowns = std::move(found.breakdowns);
  }
  basis.length = static_cast<float>(e.eta_used);

  const int L = gen.config().layers, d = gen.config().latent_dim, res = gen.config().resolution;
  if (zero_offset) {
    e.n_o = ExtendedLatent<float>::Zero(L, d);
  } else {
    const auto spec = LatentPlan::decode(sample.z);
    e.n_o = predict_offset(fusion, face, sprite::accessory_image(request.attribute, res),
                           sprite::render_base_face(spec, res).maps);
  }
  e.n_a = compose_adjustment(e.n_o, basis);
  std::string png = encode_png(gen.synthesize(apply_edit_latent(sample.w, e.n_a)));

  std::lock_guard lock(mutex_);
  if (auto hit = edit_cache_.find(key); hit != edit_cache_.end()) return edit_json(edits_.at(hit->second));
  e.id = make_id('e', next_edit_++);
  e.image_id = e.id;
  images_[e.image_id] = std::move(png);
  edit_cache_[key] = e.id;
  const auto& stored = edits_.emplace(e.id, std::move(e)).first->second;
  return edit_json(stored);
}

json SessionState::handle_interpolate(const std::string& edit_id, int steps) {
  EditRecord e;
  SampleRecord s;
  const std::string key = edit_id + "/" + std::to_string(steps);
  const auto refs = [](const std::vector<std::string>& ids) {
    json out = json::array();
    for (const auto& id : ids) out.push_back(image_ref(id));
    return json{{"frames", out}};
  };
  {
    std::lock_guard lock(mutex_);
    auto it = edits_.find(edit_id);
    require(it != edits_.end(), ErrorKind::UnknownEdit, "no edit '" + edit_id + "'");
    require(steps >= 2, ErrorKind::InvalidSteps, "interpolation needs at least 2 steps, got " + std::to_string(steps));
    require(static_cast<std::size_t>(steps) <= config_.service.max_count, ErrorKind::InvalidArgument,
            "steps " + std::to_string(steps) + " exceeds " + std::to_string(config_.service.max_count));
    if (auto hit = frame_cache_.find(key); hit != frame_cache_.end()) return refs(hit->second);
    e = it->second;
    s = samples_.at(e.sample_id);
  }

  std::vector<std::string> pngs;
  if (steps > 2) {
    const auto frames = interpolate_edit(models_->gen(), s.w, e.n_a, steps);
    for (int k = 1; k + 1 < steps; ++k) pngs.push_back(encode_png(frames[static_cast<std::size_t>(k)]));
  }

  std::lock_guard lock(mutex_);
  if (auto hit = frame_cache_.find(key); hit != frame_cache_.end()) return refs(hit->second);
  std::vector<std::string> ids{s.image_id};
  for (std::size_t k = 0; k < pngs.size(); ++k) {
    const std::string id = e.id + "_k" + std::to_string(steps) + "_" + std::to_string(k + 1);
    images_[id] = std::move(pngs[k]);
    ids.push_back(id);
  }
  ids.push_back(e.image_id);
  frame_cache_[key] = ids;
  return refs(ids);
}

json SessionState::attributes() const {
  const GridSpec& grid = config_.fusion_data.grid;
  json list = json::array();
  for (const auto& a : sprite::discrete_attributes()) {
    const auto basis = models_->bases.find(a);
    list.push_back({{"id", a},
                    {"editable", models_->fusions.count(a) > 0 && basis != models_->bases.end()},
                    {"auto_search", models_->detectors.count(a) > 0},
                    {"eta_m", basis != models_->bases.end() ? json(basis->second.length) : json(nullptr)}});
  }
  return {{"attributes", list},
          {"grid_min", grid.lo},
          {"grid_max", grid.hi},
          {"grid_step", grid.step},
          {"grid_points", grid.count()},
          {"generator_loaded", models_->generator.has_value()}};
}

std::optional<std::string> SessionState::image_png(const std::string& image_id) const {
  std::lock_guard lock(mutex_);
  auto it = images_.find(image_id);
  if (it == images_.end()) return std::nullopt;
  return it->second;
}

std::optional<SampleRecord> SessionState::sample(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = samples_.find(id);
  if (it == samples_.end()) return std::nullopt;
  return it->second;
}

std::optional<EditRecord> SessionState::edit(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = edits_.find(id);
  if (it == edits_.end()) return std::nullopt;
  return it->second;
}

std::size_t SessionState::sample_count() const {
  std::lock_guard lock(mutex_);
  return samples_.size();
}

std::size_t SessionState::edit_count() const {
  std::lock_guard lock(mutex_);
  return edits_.size();
}

std::string SessionState::export_archive() const {
  std::lock_guard lock(mutex_);
  std::vector<ArchiveEntry> files;
  json samples = json::array(), edits = json::array(), cache = json::object(), frames = json::object();
  for (const auto& [id, s] : samples_) {
    samples.push_back({{"id", id}, {"z", "latents/" + id + ".z.sdgt"}, {"w", "latents/" + id + ".w.sdgt"},
                       {"image", "images/" + s.image_id + ".png"}});
    files.emplace_back("latents/" + id + ".z.sdgt", encode_tensor(vector_tensor(s.z)));
    files.emplace_back("latents/" + id + ".w.sdgt", encode_tensor(vector_tensor(s.w.values)));
  }
  for (const auto& [id, e] : edits_) {
    json b = json::array();
    for (const auto& s : e.breakdowns) b.push_back(s.to_json());
    edits.push_back({{"id", id},
                     {"sample_id", e.sample_id},
                     {"attribute", e.attribute},
                     {"mode", e.auto_search ? "auto" : "fixed"},
                     {"eta_used", e.eta_used},
                     {"zero_offset", e.zero_offset},
                     {"n_o", "edits/" + id + ".n_o.sdgt"},
                     {"n_a", "edits/" + id + ".n_a.sdgt"},
                     {"image", "images/" + e.image_id + ".png"},
                     {"score_breakdowns", b}});
    files.emplace_back("edits/" + id + ".n_o.sdgt", encode_tensor(matrix_tensor(e.n_o)));
    files.emplace_back("edits/" + id + ".n_a.sdgt", encode_tensor(matrix_tensor(e.n_a)));
  }
  for (const auto& [k, v] : edit_cache_) cache[k] = v;
  for (const auto& [k, v] : frame_cache_) frames[k] = v;
  for (const auto& [id, png] : images_) files.emplace_back("images/" + id + ".png", png);

  const json manifest = {{"format", "sdgan-session"},
                         {"version", 1},
                         {"samples", samples},
                         {"edits", edits},
                         {"edit_requests", cache},
                         {"interpolations", frames},
                         {"next_sample", next_sample_},
                         {"next_edit", next_edit_},
                         {"unseeded_draws", unseeded_draws_}};
  files.insert(files.begin(), {"manifest.json", manifest.dump(2) + "\n"});
  return write_tar(files);
}

void SessionState::export_session(const std::filesystem::path& path) const { write_file(path, export_archive()); }

void SessionState::import_archive(const std::string& bytes) {
  std::map<std::string, std::string> files;
  for (auto& [name, data] : read_tar(bytes)) files[name] = std::move(data);
  const auto file = [&](const std::string& name) -> const std::string& {
    auto it = files.find(name);
    require(it != files.end(), ErrorKind::FormatError, "session archive lacks " + name);
    return it->second;
  };

  std::map<std::string, SampleRecord> samples;
  std::map<std::string, EditRecord> edits;
  std::map<std::string, std::string> cache, images;
  std::map<std::string, std::vector<std::string>> frames;
  json m;
  try {
    m = json::parse(file("manifest.json"));
    require(m.at("format") == "sdgan-session", ErrorKind::FormatError, "not a session archive");
    const auto image_id = [](const std::string& path) {
      require(path.rfind("images/", 0) == 0 && path.size() > 11, ErrorKind::FormatError, "bad image path " + path);
      return path.substr(7, path.size() - 11);
    };
    for (const auto& j : m.at("samples")) {
      SampleRecord s;
      s.id = j.at("id").get<std::string>();
      s.z = decode_tensor(file(j.at("z")), j.at("z")).data();
      s.w = {decode_tensor(file(j.at("w")), j.at("w")).data(), LatentSpace::W};
      s.image_id = image_id(j.at("image"));
      samples.emplace(s.id, std::move(s));
    }
    for (const auto& j : m.at("edits")) {
      EditRecord e;
      e.id = j.at("id").get<std::string>();
      e.sample_id = j.at("sample_id").get<std::string>();
      require(samples.count(e.sample_id) > 0, ErrorKind::FormatError, "edit " + e.id + " references a missing sample");
      e.attribute = j.at("attribute").get<std::string>();
      e.auto_search = j.at("mode") == "auto";
      e.eta_used = j.at("eta_used").get<double>();
      e.zero_offset = j.at("zero_offset").get<bool>();
      e.n_o = tensor_matrix(decode_tensor(file(j.at("n_o")), j.at("n_o")));
      e.n_a = tensor_matrix(decode_tensor(file(j.at("n_a")), j.at("n_a")));
      e.image_id = image_id(j.at("image"));
      for (const auto& b : j.at("score_breakdowns")) e.breakdowns.push_back(ScoreBreakdown::from_json(b));
      edits.emplace(e.id, std::move(e));
    }
    for (const auto& [k, v] : m.at("edit_requests").items()) cache[k] = v.get<std::string>();
    for (const auto& [k, v] : m.at("interpolations").items()) frames[k] = v.get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("bad session manifest: ") + e.what());
  }
  for (const auto& [name, data] : files)
    if (name.rfind("images/", 0) == 0 && name.size() > 11 && name.ends_with(".png"))
      images[name.substr(7, name.size() - 11)] = data;

  std::lock_guard lock(mutex_);
  samples_ = std::move(samples);
  edits_ = std::move(edits);
  edit_cache_ = std::move(cache);
  frame_cache_ = std::move(frames);
  images_ = std::move(images);
  next_sample_ = m.value("next_sample", std::uint64_t{1});
  next_edit_ = m.value("next_edit", std::uint64_t{1});
  unseeded_draws_ = m.value("unseeded_draws", std::uint64_t{0});
  for (const auto& [id, s] : samples_) next_sample_ = std::max(next_sample_, id_number(id) + 1);
  for (const auto& [id, e] : edits_) next_edit_ = std::max(next_edit_, id_number(id) + 1);
}

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownSample:
    case ErrorKind::UnknownEdit:
    case ErrorKind::UnknownAttribute:
      return 404;
    case ErrorKind::ModelNotLoaded:
      return 503;
    case ErrorKind::IoError:
      return 500;
    default:
      return 400;
  }
}

namespace {

void send_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Handler>
httplib::Server::Handler guarded(Handler handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    try {
      handler(req, res);
    } catch (const Error& e) {
      send_json(res, {{"error", std::string(to_string(e.kind()))}, {"message", e.what()}}, http_status(e.kind()));
    } catch (const json::exception& e) {
      send_json(res, {{"error", "InvalidArgument"}, {"message", e.what()}}, 400);
    } catch (const std::exception& e) {
      send_json(res, {{"error", "Internal"}, {"message", e.what()}}, 500);
    }
  };
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidArgument, std::string("request body is not JSON: ") + e.what());
  }
}

}  // namespace

void register_routes(httplib::Server& server, SessionState& session) {
  server.Post("/api/samples", guarded([&session](const httplib::Request& req, httplib::Response& res) {
                const json j = body_json(req);
                const auto count = j.at("count").get<std::int64_t>();
                require(count >= 0, ErrorKind::InvalidArgument, "count must be non-negative");
                std::optional<std::uint64_t> seed;
                if (j.contains("seed") && !j.at("seed").is_null()) seed = j.at("seed").get<std::uint64_t>();
                send_json(res, {{"samples", session.handle_sample(static_cast<std::size_t>(count), seed)}});
              }));
  server.Post("/api/edit", guarded([&session](const httplib::Request& req, httplib::Response& res) {
                send_json(res, session.handle_edit(EditRequest::from_json(body_json(req))));
              }));
  server.Post("/api/interpolate", guarded([&session](const httplib::Request& req, httplib::Response& res) {
                const json j = body_json(req);
                send_json(res, session.handle_interpolate(j.at("edit_id").get<std::string>(), j.at("steps").get<int>()));
              }));
  server.Get("/api/attributes", guarded([&session](const httplib::Request&, httplib::Response& res) {
               send_json(res, session.attributes());
             }));
  server.Get(R"(/image/([A-Za-z0-9_]+)\.png)", guarded([&session](const httplib::Request& req, httplib::Response& res) {
               const auto png = session.image_png(req.matches[1]);
               if (!png) {
                 send_json(res, {{"error", "UnknownImage"}, {"message", "no image '" + req.matches[1].str() + "'"}}, 404);
                 return;
               }
               res.set_content(*png, "image/png");
             }));
  server.Get("/api/session/export", guarded([&session](const httplib::Request&, httplib::Response& res) {
               res.set_header("Content-Disposition", "attachment; filename=\"session.tar\"");
               res.set_content(session.export_archive(), "application/x-tar");
             }));
  server.Post("/api/session/import", guarded([&session](const httplib::Request& req, httplib::Response& res) {
                session.import_archive(req.body);
                send_json(res, {{"samples", session.sample_count()}, {"edits", session.edit_count()}});
              }));
}

}  // namespace sdgan

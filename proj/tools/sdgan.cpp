// sdgan: command-line front end for the sprite pipeline and the edit service.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "sdgan/pipeline.hpp"
#include "sdgan/service.hpp"
#include "sdgan/tensor_file.hpp"

// After Eigen: resolv.h, pulled in here, defines _res.
#include <httplib.h>

namespace fs = std::filesystem;
using namespace sdgan;
using json = nlohmann::json;

namespace {

void say(const std::string& line) { std::cerr << "[sdgan] " << line << "\n"; }

std::string default_model_root() {
  if (const char* env = std::getenv("SDGAN_MODEL_DIR"); env && *env) return env;
  return "";
}

LatentCode<float> read_w(const fs::path& path, int latent_dim) {
  const auto t = load_tensor(path);
  require(t.rank() == 1, ErrorKind::ShapeMismatch, path.string() + ": w must be a rank-1 tensor");
  LatentCode<float> w{t.data(), LatentSpace::W};
  check_latent(w, latent_dim);
  return w;
}

Tensor<float> as_tensor(const VectorX<float>& v) { return Tensor<float>({static_cast<int>(v.size())}, v); }

Tensor<float> as_tensor(const ExtendedLatent<float>& m) {
  Tensor<float> t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t[r * m.cols() + c] = m(r, c);
  return t;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, j.dump(2) + "\n");
}

sprite::AttributeMix parse_mix(const std::vector<std::string>& items, const sprite::AttributeMix& fallback) {
  if (items.empty()) return fallback;
  sprite::AttributeMix mix;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    require(eq != std::string::npos, ErrorKind::InvalidMix, "mix entries look like face_mask=0.2, got '" + item + "'");
    mix[item.substr(0, eq)] = std::stod(item.substr(eq + 1));
  }
  return mix;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sdgan: semantic-basis editing on the sprite world"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config with dims, paths, training and service sections");

  AppConfig config;
  const auto load_config = [&] {
    if (!config_path.empty()) config = AppConfig::load(config_path);
  };

  // make-data
  auto* make_data = app.add_subcommand("make-data", "Render a sprite dataset");
  std::size_t data_n = 0;
  std::uint64_t data_seed = 0;
  std::vector<std::string> data_mix;
  std::string data_out;
  bool data_n_set = false, data_seed_set = false;
  make_data->add_option("--n", data_n, "sample count");
  make_data->add_option("--seed", data_seed);
  make_data->add_option("--mix", data_mix, "attribute=fraction entries");
  make_data->add_option("--out", data_out)->required();
  make_data->callback([&] {
    load_config();
    data_n_set = make_data->count("--n") > 0;
    data_seed_set = make_data->count("--seed") > 0;
    const auto ds = sprite::generate_dataset(data_n_set ? data_n : config.sprite_samples,
                                             data_seed_set ? data_seed : config.sprite_seed,
                                             parse_mix(data_mix, config.mix), config.dims.resolution);
    sprite::write_dataset(ds, data_out);
    say("wrote " + std::to_string(ds.samples.size()) + " samples to " + data_out);
  });

  // train-generator
  auto* train_gen = app.add_subcommand("train-generator", "Pre-train the style generator on sprites");
  std::string gen_data, gen_out;
  int gen_steps = 0;
  std::uint64_t gen_seed = 0;
  train_gen->add_option("--data", gen_data)->required();
  train_gen->add_option("--out", gen_out)->required();
  train_gen->add_option("--steps", gen_steps);
  train_gen->add_option("--seed", gen_seed);
  train_gen->callback([&] {
    load_config();
    auto tc = config.generator;
    if (train_gen->count("--steps")) tc.steps = gen_steps;
    if (train_gen->count("--seed")) tc.seed = gen_seed;
    const auto ds = sprite::read_dataset(gen_data);
    auto result = train_generator(ds, config.dims, tc, [](int step, double loss) {
      say("step " + std::to_string(step) + " loss " + std::to_string(loss));
    });
    save_generator(result.model, gen_out, {{"data", gen_data}});
    say("generator saved to " + gen_out);
  });

  // train-predictor
  auto* train_pred = app.add_subcommand("train-predictor", "Train an attribute predictor or detector");
  std::string pred_attr, pred_data, pred_out, pred_role = "predictor";
  std::uint64_t pred_seed = 0;
  train_pred->add_option("--attr", pred_attr)->required();
  train_pred->add_option("--data", pred_data)->required();
  train_pred->add_option("--out", pred_out)->required();
  train_pred->add_option("--role", pred_role)->check(CLI::IsMember({"predictor", "detector"}));
  train_pred->add_option("--seed", pred_seed);
  train_pred->callback([&] {
    load_config();
    const auto ds = sprite::read_dataset(pred_data);
    const bool detector = pred_role == "detector";
    auto pc = config.predictor;
    std::uint64_t label_seed = 5;
    if (detector) pc.seed = label_seed = config.detector_seed;
    if (train_pred->count("--seed")) pc.seed = label_seed = pred_seed;
    const auto kind = kind_for_attribute(pred_attr);
    require(!detector || kind == PredictorKind::BinaryPresence, ErrorKind::RoleMismatch,
            "detectors exist only for accessory attributes");
    const auto model = train_predictor(label_dataset(ds, pred_attr, 0.3, label_seed), pred_attr, kind,
                                       detector ? ModelKind::Detector : ModelKind::Predictor, pc);
    save_predictor(model, pred_out);
    std::cout << model.metrics.dump() << "\n";
  });

  // learn-basis
  auto* basis_cmd = app.add_subcommand("learn-basis", "Fit the SVM boundary for one attribute");
  std::string basis_attr, basis_gen, basis_pred, basis_out;
  std::size_t basis_samples = 0;
  basis_cmd->add_option("--attr", basis_attr)->required();
  basis_cmd->add_option("--generator", basis_gen)->required();
  basis_cmd->add_option("--predictor", basis_pred)->required();
  basis_cmd->add_option("--samples", basis_samples);
  basis_cmd->add_option("--out", basis_out)->required();
  basis_cmd->callback([&] {
    load_config();
    auto bc = config.basis;
    if (basis_cmd->count("--samples")) bc.samples = basis_samples;
    const auto gen = load_generator(basis_gen, config.dims);
    const auto pred = load_predictor(basis_pred);
    require(pred.attribute_id == basis_attr, ErrorKind::RoleMismatch,
            "predictor is for '" + pred.attribute_id + "', not '" + basis_attr + "'");
    const auto learned = learn_basis(gen, pred, bc);
    if (fs::path(basis_out).has_parent_path()) fs::create_directories(fs::path(basis_out).parent_path());
    save_basis(basis_out, learned.fit.basis,
               {{"train_accuracy", learned.fit.train_accuracy},
                {"svm_epochs", learned.fit.epochs},
                {"samples", bc.samples},
                {"lambda", config.fusion_data.lambda},
                {"grid", config.fusion_data.grid.to_string()}});
    say("basis accuracy " + std::to_string(learned.fit.train_accuracy));
  });

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "Draw a latent and write z, w and the synthesized image");
  std::string sample_gen, sample_out;
  std::uint64_t sample_seed = 0, sample_index = 0;
  sample_cmd->add_option("--generator", sample_gen)->required();
  sample_cmd->add_option("--seed", sample_seed);
  sample_cmd->add_option("--index", sample_index);
  sample_cmd->add_option("--out", sample_out)->required();
  sample_cmd->callback([&] {
    load_config();
    const auto gen = load_generator(sample_gen, config.dims);
    std::mt19937_64 rng(sprite::derive_seed(sample_seed, sample_index));
    const auto z = LatentPlan::sample_with_attributes({}, gen.config().latent_dim, rng);
    const auto w = gen.map_latent({z, LatentSpace::Z});
    fs::create_directories(sample_out);
    save_tensor(fs::path(sample_out) / "z.sdgt", as_tensor(z));
    save_tensor(fs::path(sample_out) / "w.sdgt", as_tensor(w.values));
    save_png(fs::path(sample_out) / "image.png", gen.synthesize(w));
    write_json(fs::path(sample_out) / "spec.json", LatentPlan::decode(z).to_json());
  });

  // search-eta
  auto* search_cmd = app.add_subcommand("search-eta", "Grid-search the basis length for one latent");
  std::string search_w, search_basis, search_det, search_gen, search_report, search_grid;
  double search_lambda = 0.0;
  search_cmd->add_option("--w", search_w)->required();
  search_cmd->add_option("--basis", search_basis)->required();
  search_cmd->add_option("--detector", search_det)->required();
  search_cmd->add_option("--generator", search_gen, "defaults to <models>/generator");
  search_cmd->add_option("--grid", search_grid, "lo:hi:step");
  search_cmd->add_option("--lambda", search_lambda);
  search_cmd->add_option("--report", search_report)->required();
  search_cmd->callback([&] {
    load_config();
    if (search_gen.empty()) {
      const std::string root = default_model_root().empty() ? config.paths.models : default_model_root();
      search_gen = ModelLayout{root}.generator().string();
    }
    const auto gen = load_generator(search_gen, config.dims);
    const auto det = load_predictor(search_det);
    const auto basis = load_basis(search_basis);
    require(det.attribute_id == basis.attribute_id, ErrorKind::RoleMismatch,
            "detector is for '" + det.attribute_id + "', basis for '" + basis.attribute_id + "'");
    const GridSpec grid = search_grid.empty() ? config.fusion_data.grid : GridSpec::parse(search_grid);
    const double lambda = search_cmd->count("--lambda") ? search_lambda : config.fusion_data.lambda;
    const auto w = read_w(search_w, gen.config().latent_dim);
    const auto region = attribute_region_mask(gen.synthesize(w), basis.attribute_id, config.fusion_data.region_mode);
    const auto found = search_optimal_length(gen, det, w, basis, region, grid, lambda);
    json b = json::array();
    for (const auto& s : found.breakdowns) b.push_back(s.to_json());
    write_json(search_report, {{"attribute_id", basis.attribute_id},
                               {"eta_m", found.eta_m},
                               {"grid", grid.to_string()},
                               {"lambda", lambda},
                               {"breakdowns", b}});
    std::cout << found.eta_m << "\n";
  });

  // edit
  auto* edit_cmd = app.add_subcommand("edit", "Apply the learned edit to one latent");
  std::string edit_w, edit_z, edit_attr, edit_fusion, edit_basis, edit_gen, edit_out, edit_dump;
  double edit_eta = 0.0;
  bool edit_zero = false;
  edit_cmd->add_option("--w", edit_w)->required();
  edit_cmd->add_option("--z", edit_z, "z of the sample; without it the face spec is estimated from the image");
  edit_cmd->add_option("--attr", edit_attr)->required();
  edit_cmd->add_option("--fusion", edit_fusion)->required();
  edit_cmd->add_option("--basis", edit_basis)->required();
  edit_cmd->add_option("--generator", edit_gen, "defaults to <models>/generator");
  edit_cmd->add_option("--eta", edit_eta, "basis length; defaults to the basis file's eta_m");
  edit_cmd->add_flag("--zero-offset", edit_zero, "use n_o = 0");
  edit_cmd->add_option("--out", edit_out)->required();
  edit_cmd->add_option("--dump-latents", edit_dump);
  edit_cmd->callback([&] {
    load_config();
    if (edit_gen.empty()) {
      const std::string root = default_model_root().empty() ? config.paths.models : default_model_root();
      edit_gen = ModelLayout{root}.generator().string();
    }
    const auto gen = load_generator(edit_gen, config.dims);
    const auto fusion = load_fusion(edit_fusion);
    auto basis = load_basis(edit_basis);
    require(basis.attribute_id == edit_attr, ErrorKind::RoleMismatch,
            "basis is for '" + basis.attribute_id + "', not '" + edit_attr + "'");
    if (edit_cmd->count("--eta")) basis.length = static_cast<float>(edit_eta);
    const auto w = read_w(edit_w, gen.config().latent_dim);
    const int res = gen.config().resolution;
    const auto face = gen.synthesize(w);
    const auto spec = edit_z.empty() ? estimate_face_spec(face) : LatentPlan::decode(load_tensor(edit_z).data());
    const auto maps = sprite::render_base_face(spec, res).maps;
    EditOutput e;
    if (edit_zero) {
      e.n_o = ExtendedLatent<float>::Zero(gen.config().layers, gen.config().latent_dim);
      e.n_a = compose_adjustment(e.n_o, basis);
      e.image = gen.synthesize(apply_edit_latent(w, e.n_a));
    } else {
      e = forward_edit(gen, fusion, basis, w, face, sprite::accessory_image(edit_attr, res), maps);
    }
    if (fs::path(edit_out).has_parent_path()) fs::create_directories(fs::path(edit_out).parent_path());
    save_png(edit_out, e.image);
    if (!edit_dump.empty()) {
      fs::create_directories(edit_dump);
      save_tensor(fs::path(edit_dump) / "w.sdgt", as_tensor(w.values));
      save_tensor(fs::path(edit_dump) / "n_o.sdgt", as_tensor(e.n_o));
      save_tensor(fs::path(edit_dump) / "n_a.sdgt", as_tensor(e.n_a));
      write_json(fs::path(edit_dump) / "edit.json", {{"attribute_id", edit_attr},
                                                     {"eta", basis.length},
                                                     {"zero_offset", edit_zero},
                                                     {"face_spec", spec.to_json()},
                                                     {"spec_source", edit_z.empty() ? "estimated" : "z"}});
    }
  });

  // train-fusion
  auto* fusion_cmd = app.add_subcommand("train-fusion", "Train the attribute fusion network");
  std::string fusion_data, fusion_gen, fusion_det, fusion_basis, fusion_out, fusion_eta_mode;
  fusion_cmd->add_option("--data", fusion_data, "sprite dataset for the identity pre-training")->required();
  fusion_cmd->add_option("--generator", fusion_gen)->required();
  fusion_cmd->add_option("--detector", fusion_det)->required();
  fusion_cmd->add_option("--basis", fusion_basis)->required();
  fusion_cmd->add_option("--out", fusion_out)->required();
  fusion_cmd->add_option("--eta-mode", fusion_eta_mode)->check(CLI::IsMember({"per_image", "global", "disabled"}));
  fusion_cmd->callback([&] {
    load_config();
    const auto gen = load_generator(fusion_gen, config.dims);
    const auto det = load_predictor(fusion_det);
    const auto basis = load_basis(fusion_basis);
    const auto mode = fusion_eta_mode.empty() ? config.fusion_data.eta_mode : eta_mode_from_string(fusion_eta_mode);
    const auto run = fit_fusion(config, sprite::read_dataset(fusion_data), gen, det, basis, mode, fusion_out, say);
    if (!run.train.series.empty()) std::cout << run.train.series.back().to_json().dump() << "\n";
  });

  // pipeline
  auto* pipe_cmd = app.add_subcommand("pipeline", "Run every training stage into a model directory");
  std::string pipe_models;
  pipe_cmd->add_option("--models", pipe_models);
  pipe_cmd->callback([&] {
    load_config();
    const std::string root = !pipe_models.empty()                ? pipe_models
                             : !default_model_root().empty() ? default_model_root()
                                                             : config.paths.models;
    run_pipeline(config, ModelLayout{root}, say);
    say("models written to " + root);
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate trained models on held-out samples");
  std::string eval_suite, eval_out, eval_models, eval_frames;
  bool eval_no_basis = false;
  eval_cmd->add_option("--suite", eval_suite)->required()->check(CLI::IsMember({"re-score", "decouple", "interp", "all"}));
  eval_cmd->add_option("--out", eval_out)->required();
  eval_cmd->add_option("--models", eval_models);
  eval_cmd->add_option("--frames", eval_frames, "directory for interpolation strips (interp suite)");
  eval_cmd->add_flag("--no-basis", eval_no_basis, "edit with n_b = 0");
  eval_cmd->callback([&] {
    load_config();
    const std::string root = !eval_models.empty()               ? eval_models
                             : !default_model_root().empty() ? default_model_root()
                                                             : config.paths.models;
    const auto models = load_models(ModelLayout{root}, config.dims);
    auto outcome = evaluate_pipeline(models, config, !eval_no_basis, say);
    auto& report = outcome.report;
    if (eval_suite == "re-score") {
      report.decoupling.clear();
      report.interpolation.clear();
    } else if (eval_suite == "decouple") {
      report.re_scores.clear();
      report.interpolation.clear();
    } else if (eval_suite == "interp") {
      report.re_scores.clear();
      report.decoupling.clear();
    }
    report.summary["suite"] = eval_suite;
    if (fs::path(eval_out).has_parent_path()) fs::create_directories(fs::path(eval_out).parent_path());
    write_eval_report(report, eval_out);
    if (!eval_frames.empty() && (eval_suite == "interp" || eval_suite == "all")) {
      fs::create_directories(eval_frames);
      for (const auto& [a, ao] : outcome.attributes)
        for (std::size_t i = 0; i < ao.strips.size(); ++i)
          save_png(fs::path(eval_frames) / (a + "_" + std::to_string(i) + ".png"), ao.strips[i]);
    }
    std::cout << report.summary.dump() << "\n";
  });

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Serve the edit API over HTTP");
  std::string serve_host, serve_models, serve_static;
  int serve_port = 0;
  serve_cmd->add_option("--host", serve_host);
  serve_cmd->add_option("--port", serve_port);
  serve_cmd->add_option("--models", serve_models, "model root; defaults to $SDGAN_MODEL_DIR");
  serve_cmd->add_option("--static", serve_static, "directory mounted at / (the editor UI build)");
  serve_cmd->callback([&] {
    load_config();
    if (!serve_host.empty()) config.service.host = serve_host;
    if (serve_cmd->count("--port")) config.service.port = serve_port;
    const std::string root = !serve_models.empty()              ? serve_models
                             : !default_model_root().empty() ? default_model_root()
                                                             : config.paths.models;
    auto models = std::make_shared<const ModelBundle>(load_models(ModelLayout{root}, config.dims));
    if (!models->generator) say("warning: no generator under " + root + "; sampling will return 503");
    SessionState session(models, config);
    httplib::Server server;
    register_routes(server, session);
    if (!serve_static.empty() && !server.set_mount_point("/", serve_static))
      fail(ErrorKind::IoError, "cannot mount " + serve_static);
    say("listening on " + config.service.host + ":" + std::to_string(config.service.port) + " models " + root);
    if (!server.listen(config.service.host, config.service.port))
      fail(ErrorKind::IoError, "cannot listen on " + config.service.host + ":" + std::to_string(config.service.port));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "sdgan: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "sdgan: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

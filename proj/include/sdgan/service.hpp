#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdgan/pipeline.hpp"

namespace httplib {
class Server;
}

namespace sdgan {

struct SampleRecord {
  std::string id;
  VectorX<float> z;
  LatentCode<float> w;
  std::string image_id;
};

struct EditRecord {
  std::string id;
  std::string sample_id;
  std::string attribute;
  bool auto_search = false;
  double eta_used = 0.0;
  bool zero_offset = false;
  ExtendedLatent<float> n_o;
  ExtendedLatent<float> n_a;
  std::string image_id;
  std::vector<ScoreBreakdown> breakdowns;  // auto_search only
};

struct EditRequest {
  std::string sample_id;
  std::string attribute;
  std::optional<double> eta;  // empty: auto search
  std::optional<bool> zero_offset;

  static EditRequest from_json(const nlohmann::json& j);
};

// In-memory sample and edit stores over a read-only model bundle. Every
// handler is safe to call from several threads.
class SessionState {
 public:
  SessionState(std::shared_ptr<const ModelBundle> models, AppConfig config);

  nlohmann::json handle_sample(std::size_t count, std::optional<std::uint64_t> seed = std::nullopt);
  nlohmann::json handle_edit(const EditRequest& request);
  nlohmann::json handle_interpolate(const std::string& edit_id, int steps);
  nlohmann::json attributes() const;

  std::optional<std::string> image_png(const std::string& image_id) const;
  std::optional<SampleRecord> sample(const std::string& id) const;
  std::optional<EditRecord> edit(const std::string& id) const;
  std::size_t sample_count() const;
  std::size_t edit_count() const;

  std::string export_archive() const;
  void export_session(const std::filesystem::path& path) const;
  // Replaces the stores with the archive's contents.
  void import_archive(const std::string& bytes);

  const AppConfig& config() const { return config_; }
  const ModelBundle& models() const { return *models_; }

 private:
  const SemanticBasis& edit_basis(const std::string& attribute) const;
  nlohmann::json edit_json(const EditRecord& e) const;

  std::shared_ptr<const ModelBundle> models_;
  AppConfig config_;

  mutable std::mutex mutex_;
  std::uint64_t next_sample_ = 1;
  std::uint64_t next_edit_ = 1;
  std::uint64_t unseeded_draws_ = 0;
  std::map<std::string, SampleRecord> samples_;
  std::map<std::string, EditRecord> edits_;
  std::map<std::string, std::string> edit_cache_;  // request key -> edit id
  std::map<std::string, std::vector<std::string>> frame_cache_;  // "edit/steps" -> image ids
  std::map<std::string, std::string> images_;  // image id -> PNG bytes
};

// HTTP status for a library error: 404 unknown ids, 503 missing models,
// 400 anything else the request caused.
int http_status(ErrorKind kind);

void register_routes(httplib::Server& server, SessionState& session);

}  // namespace sdgan

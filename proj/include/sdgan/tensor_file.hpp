#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "sdgan/tensor.hpp"

namespace sdgan {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Binary layout: "SDGT", u32 LE header length, UTF-8 JSON header
// {"byte_order","dtype","shape"}, then the f32 LE payload in row-major order.
void save_tensor(const fs::path& path, const Tensor<float>& tensor);
Tensor<float> load_tensor(const fs::path& path);

std::string encode_tensor(const Tensor<float>& tensor);
Tensor<float> decode_tensor(const std::string& bytes, const std::string& origin = "<memory>");

enum class ModelKind { Generator, Fusion, Predictor, Detector };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

struct CheckpointManifest {
  static constexpr int kFormatVersion = 1;

  ModelKind model_kind = ModelKind::Generator;
  std::map<std::string, std::string> named_tensors;
  json config_snapshot = json::object();
  std::string created_at;
  int format_version = kFormatVersion;

  json to_json() const;
  static CheckpointManifest from_json(const json& j);
};

struct Checkpoint {
  CheckpointManifest manifest;
  std::map<std::string, Tensor<float>> tensors;
};

// Writes manifest.json plus one tensor file per entry. The directory is staged
// next to the target and renamed into place so a failed write leaves nothing.
CheckpointManifest write_checkpoint(const fs::path& dir, ModelKind kind,
                                    const std::map<std::string, Tensor<float>>& tensors,
                                    const json& config_snapshot, const std::string& created_at = "");

Checkpoint read_checkpoint(const fs::path& dir);

std::string utc_timestamp();

// FNV-1a over the canonical (sorted-key) dump; used as a provenance tag.
std::string config_hash(const json& config);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& bytes);

}  // namespace sdgan

#include "sdgan/tensor_file.hpp"

#include <bit>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace sdgan {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'D', 'G', 'T'};

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::IoError, "short write to " + path.string());
}

std::string encode_tensor(const Tensor<float>& tensor) {
  json header = {{"dtype", "f32"}, {"shape", tensor.shape()}, {"byte_order", "little"}};
  const std::string text = header.dump();
  const auto len = static_cast<std::uint32_t>(text.size());

  std::string out;
  out.reserve(8 + text.size() + static_cast<std::size_t>(tensor.size()) * 4);
  out.append(kMagic, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xff));
  out += text;
  out.append(reinterpret_cast<const char*>(tensor.ptr()), static_cast<std::size_t>(tensor.size()) * sizeof(float));
  return out;
}

Tensor<float> decode_tensor(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    fail(ErrorKind::FormatError, origin + ": bad magic");
  const std::uint32_t len = read_u32_le(reinterpret_cast<const unsigned char*>(bytes.data()) + 4);
  if (bytes.size() < 8ull + len) fail(ErrorKind::FormatError, origin + ": truncated header");

  json header;
  try {
    header = json::parse(bytes.substr(8, len));
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, origin + ": unparseable header (" + e.what() + ")");
  }
  if (header.value("dtype", "") != "f32") fail(ErrorKind::FormatError, origin + ": dtype must be f32");
  if (header.value("byte_order", "") != "little") fail(ErrorKind::FormatError, origin + ": byte_order must be little");
  if (!header.contains("shape") || !header["shape"].is_array()) fail(ErrorKind::FormatError, origin + ": missing shape");

  Shape shape;
  for (const auto& d : header["shape"]) {
    if (!d.is_number_integer() || d.get<long long>() < 0) fail(ErrorKind::FormatError, origin + ": bad shape entry");
    shape.push_back(d.get<int>());
  }
  const auto numel = static_cast<std::size_t>(shape_numel(shape));
  const std::size_t payload = bytes.size() - 8 - len;
  if (payload != numel * sizeof(float))
    fail(ErrorKind::FormatError, origin + ": payload has " + std::to_string(payload) + " bytes, expected " +
                                     std::to_string(numel * sizeof(float)));

  Tensor<float> t(shape);
  if (numel) std::memcpy(t.ptr(), bytes.data() + 8 + len, numel * sizeof(float));
  return t;
}

void save_tensor(const fs::path& path, const Tensor<float>& tensor) { write_file(path, encode_tensor(tensor)); }

Tensor<float> load_tensor(const fs::path& path) { return decode_tensor(read_file(path), path.string()); }

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Generator: return "generator";
    case ModelKind::Fusion: return "fusion";
    case ModelKind::Predictor: return "predictor";
    case ModelKind::Detector: return "detector";
  }
  return "generator";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "generator") return ModelKind::Generator;
  if (s == "fusion") return ModelKind::Fusion;
  if (s == "predictor") return ModelKind::Predictor;
  if (s == "detector") return ModelKind::Detector;
  fail(ErrorKind::FormatError, "unknown model kind '" + s + "'");
}

json CheckpointManifest::to_json() const {
  return {{"model_kind", to_string(model_kind)},
          {"named_tensors", named_tensors},
          {"config_snapshot", config_snapshot},
          {"created_at", created_at},
          {"format_version", format_version}};
}

CheckpointManifest CheckpointManifest::from_json(const json& j) {
  CheckpointManifest m;
  try {
    m.model_kind = model_kind_from_string(j.at("model_kind").get<std::string>());
    m.named_tensors = j.at("named_tensors").get<std::map<std::string, std::string>>();
    m.config_snapshot = j.value("config_snapshot", json::object());
    m.created_at = j.value("created_at", "");
    m.format_version = j.at("format_version").get<int>();
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, std::string("manifest: ") + e.what());
  }
  if (m.format_version != kFormatVersion)
    fail(ErrorKind::FormatError, "unsupported manifest format_version " + std::to_string(m.format_version));
  return m;
}

CheckpointManifest write_checkpoint(const fs::path& dir, ModelKind kind,
                                    const std::map<std::string, Tensor<float>>& tensors,
                                    const json& config_snapshot, const std::string& created_at) {
  CheckpointManifest manifest;
  manifest.model_kind = kind;
  manifest.config_snapshot = config_snapshot;
  manifest.created_at = created_at.empty() ? utc_timestamp() : created_at;

  const fs::path staging = dir.string() + ".partial";
  std::error_code ec;
  fs::remove_all(staging, ec);
  fs::create_directories(staging, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create " + staging.string() + ": " + ec.message());

  for (const auto& [name, tensor] : tensors) {
    std::string file = name;
    for (char& c : file)
      if (c == '/' || c == '\\' || c == ':') c = '_';
    file += ".sdgt";
    save_tensor(staging / file, tensor);
    manifest.named_tensors[name] = file;
  }
  write_file(staging / "manifest.json", manifest.to_json().dump(2) + "\n");

  fs::remove_all(dir, ec);
  if (dir.has_parent_path()) fs::create_directories(dir.parent_path(), ec);
  fs::rename(staging, dir, ec);
  if (ec) fail(ErrorKind::IoError, "cannot move checkpoint into " + dir.string() + ": " + ec.message());
  return manifest;
}

Checkpoint read_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) fail(ErrorKind::FormatError, "no manifest.json in " + dir.string());
  json j;
  try {
    j = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    fail(ErrorKind::FormatError, manifest_path.string() + ": " + e.what());
  }
  Checkpoint ckpt;
  ckpt.manifest = CheckpointManifest::from_json(j);
  for (const auto& [name, file] : ckpt.manifest.named_tensors) {
    const fs::path p = dir / file;
    if (!fs::exists(p)) fail(ErrorKind::FormatError, "missing tensor file for '" + name + "': " + p.string());
    ckpt.tensors.emplace(name, load_tensor(p));
  }
  return ckpt;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

std::string config_hash(const json& config) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

}  // namespace sdgan

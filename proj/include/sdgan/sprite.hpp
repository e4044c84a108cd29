#pragma once

// Deterministic sprite-face world: parametric faces, analytic shape maps and
// accessory overlays with exact footprints. Stands in for real photos plus the
// landmark / 3D registration tooling needed to build paired ground truth.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdgan/image.hpp"

namespace sdgan::sprite {

inline constexpr const char* kFaceMask = "face_mask";
inline constexpr const char* kFrameGlasses = "frame_glasses";
inline constexpr const char* kSunGlasses = "sun_glasses";

const std::vector<std::string>& discrete_attributes();
bool is_discrete_attribute(const std::string& id);
void check_discrete_attribute(const std::string& id);

// Continuous, labeled properties used as retained attributes.
inline constexpr const char* kHue = "hue";
inline constexpr const char* kFaceScale = "face_scale";
inline constexpr const char* kPoseShift = "pose_shift";

const std::vector<std::string>& continuous_attributes();

struct Range {
  double lo, hi;
  double normalize(double v) const { return (v - lo) / (hi - lo); }
  double denormalize(double t) const { return lo + t * (hi - lo); }
};

inline constexpr Range kHueRange{0.0, 1.0};
inline constexpr Range kScaleRange{0.7, 1.0};
inline constexpr Range kEyeSpacingRange{0.2, 0.4};
inline constexpr Range kPoseRange{-0.1, 0.1};
inline constexpr Range kBrightnessRange{0.5, 1.0};

Range continuous_range(const std::string& attribute);

struct FaceSpec {
  double face_hue = 0.5;
  double face_scale = 0.85;
  double eye_spacing = 0.3;
  double pose_shift = 0.0;
  double brightness = 0.8;
  std::set<std::string> attributes;

  void validate() const;
  double continuous(const std::string& attribute) const;
  nlohmann::json to_json() const;
  static FaceSpec from_json(const nlohmann::json& j);
  bool operator==(const FaceSpec&) const = default;
};

struct ShapeMaps {
  ImageTensor normal;
  ImageTensor diffuse;
  ImageTensor albedo;

  // (9, H, W): normal, diffuse, albedo.
  Tensor<float> stacked() const;
};

struct RenderedFace {
  ImageTensor image;
  ShapeMaps maps;
};

RenderedFace render_base_face(const FaceSpec& spec, int resolution);

struct Composite {
  ImageTensor image;
  RegionMask footprint;
};

// Overlays the accessory at the placement implied by `spec`. Pixels outside the
// footprint are copied from `base` untouched.
Composite apply_discrete_attribute(const ImageTensor& base, const FaceSpec& spec, const std::string& attribute_id);

// Footprint only (no image), e.g. for region masks of generated faces.
RegionMask attribute_footprint(const FaceSpec& spec, const std::string& attribute_id, int resolution);

std::array<double, 3> background_color();

// Face-ellipse coverage > 0 (the whole-face mask mode).
RegionMask face_region(const FaceSpec& spec, int resolution);

// The accessory alone on a neutral background (the attribute image fed to the
// attribute encoder).
ImageTensor accessory_image(const std::string& attribute_id, int resolution);

struct SpriteSample {
  FaceSpec spec;
  ImageTensor image_base;
  ImageTensor image_gt;
  RegionMask region_mask;
  ShapeMaps shape_maps;
  std::string attribute_id;  // empty when no accessory was composited

  // What a camera would see: the composited image when an accessory is present.
  const ImageTensor& observed() const { return attribute_id.empty() ? image_base : image_gt; }
};

SpriteSample make_sample(const FaceSpec& spec, int resolution);

// Every accessory in spec.attributes composited onto `base` in the canonical
// order of discrete_attributes().
ImageTensor compose_attributes(const ImageTensor& base, const FaceSpec& spec);

struct AugmentedView {
  FaceSpec spec;
  ImageTensor image;
};

// The sample with each absent accessory added independently with probability
// p, so training sees accessories co-occur.
AugmentedView with_extra_accessories(const SpriteSample& sample, double p, std::mt19937_64& rng);

// Per-sample RNG seed derived from (seed, index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

FaceSpec random_spec(std::uint64_t seed);

using AttributeMix = std::map<std::string, double>;

struct Dataset {
  int resolution = 32;
  std::uint64_t seed = 0;
  AttributeMix mix;
  std::vector<SpriteSample> samples;

  nlohmann::json manifest() const;
};

Dataset generate_dataset(std::size_t n, std::uint64_t seed, const AttributeMix& mix, int resolution = 32);

// Writes images/, gt/, masks/, maps/ and manifest.json.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

// Class-labeled subdirectories of PNG images.
struct IngestEntry {
  std::string path;
  std::string label;
};

struct IngestManifest {
  std::vector<IngestEntry> entries;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

IngestManifest ingest_external(const std::filesystem::path& dir);

}  // namespace sdgan::sprite

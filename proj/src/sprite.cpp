#include "sdgan/sprite.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>

#include "sdgan/tensor_file.hpp"

namespace sdgan::sprite {

namespace {

using Color = Eigen::Vector3d;

const Color kBackground(0.22, 0.26, 0.32);
const Color kSkinA(0.96, 0.72, 0.52);
const Color kSkinB(0.62, 0.78, 0.46);
const Color kEye(0.08, 0.08, 0.12);
const Color kMouth(0.70, 0.20, 0.22);
const Color kMaskColor(0.80, 0.90, 1.00);
const Color kFrameColor(0.05, 0.05, 0.05);
const Color kLensColor(0.10, 0.10, 0.14);
const Color kNeutral(0.5, 0.5, 0.5);

// Everything is measured in image-width units relative to the image centre;
// +y points down.
struct Geometry {
  double cx, cy, a, b, c;
  double eye_dx, eye_y, eye_r;
  double mouth_y, mouth_a, mouth_b;
  double mask_top;
  double ring_r, lens_r, stroke;
  int n;

  explicit Geometry(const FaceSpec& s, int resolution) : n(resolution) {
    const double k = s.face_scale;
    cx = s.pose_shift;
    cy = 0.02;
    a = 0.34 * k;
    b = 0.42 * k;
    c = 0.3 * (a + b);
    eye_dx = 0.5 * s.eye_spacing * k;
    eye_y = cy - 0.12 * k;
    eye_r = 0.045 * k;
    mouth_y = cy + 0.21 * k;
    mouth_a = 0.10 * k;
    mouth_b = 0.035 * k;
    mask_top = cy + 0.06 * k;
    ring_r = 0.09 * k;
    lens_r = 0.095 * k;
    stroke = 0.035;
  }

  // Pixel centre coordinates; (x + 0.5 - n/2) is exactly antisymmetric under
  // mirroring, which keeps pose-free faces bit-symmetric.
  double px(int x) const { return (x + 0.5 - 0.5 * n) / n; }
  double py(int y) const { return (y + 0.5 - 0.5 * n) / n; }

  // Coverage of a region with signed distance sd (image units, >0 inside),
  // antialiased over one pixel.
  double coverage(double sd) const { return std::clamp(sd * n + 0.5, 0.0, 1.0); }

  double ellipse_sd(double x, double y, double ea, double eb, double ox, double oy) const {
    const double ex = (x - ox) / ea, ey = (y - oy) / eb;
    return (1.0 - std::sqrt(ex * ex + ey * ey)) * std::min(ea, eb);
  }

  double face_sd(double x, double y) const { return ellipse_sd(x, y, a, b, cx, cy); }

  Eigen::Vector3d face_normal(double x, double y) const {
    const double ex = (x - cx) / a, ey = (y - cy) / b;
    const double h = std::sqrt(std::max(1.0 - ex * ex - ey * ey, 0.0));
    Eigen::Vector3d nrm(ex / a, ey / b, std::max(h, 0.05) / c);
    return nrm.normalized();
  }
};

const Eigen::Vector3d& light_dir() {
  static const Eigen::Vector3d l = Eigen::Vector3d(0.0, -0.5, 1.0).normalized();
  return l;
}

double lambert(const Eigen::Vector3d& n) { return std::max(0.0, n.dot(light_dir())); }

Eigen::Vector3d blended_normal(const Geometry& g, double x, double y, double cov) {
  const Eigen::Vector3d flat(0, 0, 1);
  if (cov <= 0.0) return flat;
  return (cov * g.face_normal(x, y) + (1.0 - cov) * flat).normalized();
}

double shade_factor(double brightness, double lam) { return 0.4 + 0.6 * brightness * lam; }

void put(ImageTensor& img, int y, int x, const Color& c) {
  for (int k = 0; k < 3; ++k) img.at(k, y, x) = static_cast<float>(c[k]);
}

Color get(const ImageTensor& img, int y, int x) {
  return Color(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
}

// Accessory alpha and colour at one pixel.
struct Overlay {
  double alpha = 0.0;
  Color color = Color::Zero();
};

Overlay accessory_at(const Geometry& g, const FaceSpec& spec, const std::string& id, double x, double y) {
  Overlay o;
  if (id == kFaceMask) {
    const double sd = std::min(g.ellipse_sd(x, y, 1.03 * g.a, 1.03 * g.b, g.cx, g.cy), y - g.mask_top);
    o.alpha = g.coverage(sd);
    const double cov = g.coverage(g.face_sd(x, y));
    const double lam = lambert(blended_normal(g, x, y, cov));
    o.color = kMaskColor * (0.55 + 0.45 * spec.brightness * lam);
    return o;
  }
  const double left = g.cx - g.eye_dx, right = g.cx + g.eye_dx;
  const double dl = std::hypot(x - left, y - g.eye_y), dr = std::hypot(x - right, y - g.eye_y);
  const double half = 0.5 * g.stroke;
  const double bridge_sd = std::min(half - std::abs(y - g.eye_y), (g.eye_dx - g.ring_r + half) - std::abs(x - g.cx));
  if (id == kFrameGlasses) {
    const double ring_sd = std::max(half - std::abs(dl - g.ring_r), half - std::abs(dr - g.ring_r));
    o.alpha = g.coverage(std::max(ring_sd, bridge_sd));
    o.color = kFrameColor;
    return o;
  }
  if (id == kSunGlasses) {
    const double lens_sd = std::max(g.lens_r - dl, g.lens_r - dr);
    o.alpha = g.coverage(std::max(lens_sd, bridge_sd));
    o.color = kLensColor;
    return o;
  }
  fail(ErrorKind::UnknownAttribute, "unknown attribute '" + id + "'");
}

}  // namespace

const std::vector<std::string>& discrete_attributes() {
  static const std::vector<std::string> ids{kFaceMask, kFrameGlasses, kSunGlasses};
  return ids;
}

bool is_discrete_attribute(const std::string& id) {
  const auto& ids = discrete_attributes();
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

void check_discrete_attribute(const std::string& id) {
  require(is_discrete_attribute(id), ErrorKind::UnknownAttribute, "unknown attribute '" + id + "'");
}

const std::vector<std::string>& continuous_attributes() {
  static const std::vector<std::string> ids{kHue, kFaceScale, kPoseShift};
  return ids;
}

Range continuous_range(const std::string& attribute) {
  if (attribute == kHue) return kHueRange;
  if (attribute == kFaceScale) return kScaleRange;
  if (attribute == kPoseShift) return kPoseRange;
  fail(ErrorKind::UnknownAttribute, "no continuous attribute '" + attribute + "'");
}

void FaceSpec::validate() const {
  auto in = [](double v, Range r) { return v >= r.lo - 1e-12 && v <= r.hi + 1e-12; };
  require(in(face_hue, kHueRange) && in(face_scale, kScaleRange) && in(eye_spacing, kEyeSpacingRange) &&
              in(pose_shift, kPoseRange) && in(brightness, kBrightnessRange),
          ErrorKind::InvalidArgument, "face spec out of range");
  for (const auto& a : attributes) check_discrete_attribute(a);
}

double FaceSpec::continuous(const std::string& attribute) const {
  if (attribute == kHue) return face_hue;
  if (attribute == kFaceScale) return face_scale;
  if (attribute == kPoseShift) return pose_shift;
  fail(ErrorKind::UnknownAttribute, "no continuous attribute '" + attribute + "'");
}

nlohmann::json FaceSpec::to_json() const {
  return {{"face_hue", face_hue},     {"face_scale", face_scale}, {"eye_spacing", eye_spacing},
          {"pose_shift", pose_shift}, {"brightness", brightness}, {"attributes", attributes}};
}

FaceSpec FaceSpec::from_json(const nlohmann::json& j) {
  FaceSpec s;
  s.face_hue = j.at("face_hue").get<double>();
  s.face_scale = j.at("face_scale").get<double>();
  s.eye_spacing = j.at("eye_spacing").get<double>();
  s.pose_shift = j.at("pose_shift").get<double>();
  s.brightness = j.at("brightness").get<double>();
  s.attributes = j.value("attributes", std::set<std::string>{});
  return s;
}

Tensor<float> ShapeMaps::stacked() const {
  const int h = normal.dim(1), w = normal.dim(2);
  Tensor<float> out({9, h, w});
  const auto plane = normal.size();
  out.data().segment(0, plane) = normal.data();
  out.data().segment(plane, plane) = diffuse.data();
  out.data().segment(2 * plane, plane) = albedo.data();
  return out;
}

RenderedFace render_base_face(const FaceSpec& spec, int resolution) {
  spec.validate();
  const Geometry g(spec, resolution);
  const Color skin = (1.0 - spec.face_hue) * kSkinA + spec.face_hue * kSkinB;

  RenderedFace out{make_image(resolution, resolution),
                   {make_image(resolution, resolution), make_image(resolution, resolution),
                    make_image(resolution, resolution)}};
  for (int yi = 0; yi < resolution; ++yi) {
    const double y = g.py(yi);
    for (int xi = 0; xi < resolution; ++xi) {
      const double x = g.px(xi);
      const double cov = g.coverage(g.face_sd(x, y));

      Color face = skin;
      const double eyes = std::max(g.coverage(g.eye_r - std::hypot(x - (g.cx - g.eye_dx), y - g.eye_y)),
                                   g.coverage(g.eye_r - std::hypot(x - (g.cx + g.eye_dx), y - g.eye_y)));
      face = (1.0 - eyes) * face + eyes * kEye;
      const double mouth = g.coverage(g.ellipse_sd(x, y, g.mouth_a, g.mouth_b, g.cx, g.mouth_y));
      face = (1.0 - mouth) * face + mouth * kMouth;

      const Eigen::Vector3d n = blended_normal(g, x, y, cov);
      const double lam = lambert(n);
      const Color albedo = (1.0 - cov) * kBackground + cov * face;
      const Color shaded = (1.0 - cov) * kBackground + cov * face * shade_factor(spec.brightness, lam);

      put(out.image, yi, xi, shaded);
      put(out.maps.albedo, yi, xi, albedo);
      put(out.maps.diffuse, yi, xi, spec.brightness * lam * albedo);
      put(out.maps.normal, yi, xi, (n.array() + 1.0) * 0.5);
    }
  }
  return out;
}

Composite apply_discrete_attribute(const ImageTensor& base, const FaceSpec& spec, const std::string& attribute_id) {
  check_discrete_attribute(attribute_id);
  require(base.rank() == 3 && base.dim(0) == 3 && base.dim(1) == base.dim(2), ErrorKind::ShapeMismatch,
          "base image must be square (3,H,W)");
  const int n = base.dim(1);
  const Geometry g(spec, n);
  Composite out{base, RegionMask(n, n)};
  for (int yi = 0; yi < n; ++yi)
    for (int xi = 0; xi < n; ++xi) {
      const Overlay o = accessory_at(g, spec, attribute_id, g.px(xi), g.py(yi));
      if (o.alpha <= 0.0) continue;
      out.footprint.at(yi, xi) = 1;
      put(out.image, yi, xi, (1.0 - o.alpha) * get(base, yi, xi) + o.alpha * o.color);
    }
  return out;
}

RegionMask attribute_footprint(const FaceSpec& spec, const std::string& attribute_id, int resolution) {
  check_discrete_attribute(attribute_id);
  const Geometry g(spec, resolution);
  RegionMask m(resolution, resolution);
  for (int yi = 0; yi < resolution; ++yi)
    for (int xi = 0; xi < resolution; ++xi)
      m.at(yi, xi) = accessory_at(g, spec, attribute_id, g.px(xi), g.py(yi)).alpha > 0.0 ? 1 : 0;
  return m;
}

std::array<double, 3> background_color() { return {kBackground.x(), kBackground.y(), kBackground.z()}; }

RegionMask face_region(const FaceSpec& spec, int resolution) {
  const Geometry g(spec, resolution);
  RegionMask m(resolution, resolution);
  for (int yi = 0; yi < resolution; ++yi)
    for (int xi = 0; xi < resolution; ++xi) m.at(yi, xi) = g.coverage(g.face_sd(g.px(xi), g.py(yi))) > 0.0 ? 1 : 0;
  return m;
}

ImageTensor accessory_image(const std::string& attribute_id, int resolution) {
  ImageTensor gray = make_image(resolution, resolution);
  gray.data().setConstant(static_cast<float>(kNeutral[0]));
  return apply_discrete_attribute(gray, FaceSpec{}, attribute_id).image;
}

SpriteSample make_sample(const FaceSpec& spec, int resolution) {
  FaceSpec base_spec = spec;
  base_spec.attributes.clear();
  RenderedFace face = render_base_face(base_spec, resolution);
  SpriteSample s{spec, face.image, face.image, RegionMask(resolution, resolution), std::move(face.maps), ""};
  require(spec.attributes.size() <= 1, ErrorKind::InvalidArgument, "sprite samples carry at most one accessory");
  if (!spec.attributes.empty()) {
    s.attribute_id = *spec.attributes.begin();
    Composite c = apply_discrete_attribute(s.image_base, spec, s.attribute_id);
    s.image_gt = std::move(c.image);
    s.region_mask = std::move(c.footprint);
  }
  return s;
}

ImageTensor compose_attributes(const ImageTensor& base, const FaceSpec& spec) {
  for (const auto& a : spec.attributes) check_discrete_attribute(a);
  ImageTensor out = base;
  for (const auto& a : discrete_attributes())
    if (spec.attributes.count(a)) out = apply_discrete_attribute(out, spec, a).image;
  return out;
}

AugmentedView with_extra_accessories(const SpriteSample& sample, double p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  AugmentedView v{sample.spec, {}};
  for (const auto& a : discrete_attributes())
    if (u(rng) < p) v.spec.attributes.insert(a);
  v.image = v.spec.attributes == sample.spec.attributes ? sample.observed()
                                                        : compose_attributes(sample.image_base, v.spec);
  return v;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 of the pair
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + index + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

FaceSpec random_spec(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FaceSpec s;
  s.face_hue = kHueRange.denormalize(u(rng));
  s.face_scale = kScaleRange.denormalize(u(rng));
  s.eye_spacing = kEyeSpacingRange.denormalize(u(rng));
  s.pose_shift = kPoseRange.denormalize(u(rng));
  s.brightness = kBrightnessRange.denormalize(u(rng));
  return s;
}

nlohmann::json Dataset::manifest() const {
  nlohmann::json samples_json = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.png", i);
    nlohmann::json e = {{"index", i},
                        {"spec", s.spec.to_json()},
                        {"attribute", s.attribute_id},
                        {"image", std::string("images/") + name},
                        {"gt", std::string("gt/") + name},
                        {"mask", std::string("masks/") + name},
                        {"normal", std::string("maps/normal_") + name},
                        {"diffuse", std::string("maps/diffuse_") + name},
                        {"albedo", std::string("maps/albedo_") + name}};
    nlohmann::json labels = nlohmann::json::object();
    for (const auto& a : discrete_attributes()) labels[a] = s.attribute_id == a ? 1 : 0;
    for (const auto& a : continuous_attributes()) labels[a] = s.spec.continuous(a);
    e["labels"] = labels;
    samples_json.push_back(std::move(e));
  }
  return {{"format", "sdgan-sprites"}, {"version", 1},          {"resolution", resolution},
          {"seed", seed},              {"attribute_mix", mix},   {"count", samples.size()},
          {"samples", samples_json}};
}

Dataset generate_dataset(std::size_t n, std::uint64_t seed, const AttributeMix& mix, int resolution) {
  double total = 0.0;
  for (const auto& [id, f] : mix) {
    require(is_discrete_attribute(id), ErrorKind::InvalidMix, "unknown attribute '" + id + "' in mix");
    require(f >= 0.0 && std::isfinite(f), ErrorKind::InvalidMix, "fraction for " + id + " must be non-negative");
    total += f;
  }
  require(total <= 1.0 + 1e-9, ErrorKind::InvalidMix, "fractions sum to " + std::to_string(total) + " > 1");

  std::vector<std::string> labels;
  labels.reserve(n);
  for (const auto& [id, f] : mix) {
    auto k = static_cast<std::size_t>(std::llround(f * static_cast<double>(n)));
    k = std::min(k, n - labels.size());
    labels.insert(labels.end(), k, id);
  }
  labels.resize(n, "");
  std::mt19937_64 rng(derive_seed(seed, ~0ull));
  std::shuffle(labels.begin(), labels.end(), rng);

  Dataset d{resolution, seed, mix, {}};
  d.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    FaceSpec spec = random_spec(derive_seed(seed, i));
    if (!labels[i].empty()) spec.attributes.insert(labels[i]);
    d.samples.push_back(make_sample(spec, resolution));
  }
  return d;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const char* sub : {"images", "gt", "masks", "maps"}) fs::create_directories(dir / sub);
  const auto manifest = dataset.manifest();
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    const auto& e = manifest["samples"][i];
    save_png(dir / e["image"].get<std::string>(), s.image_base);
    save_png(dir / e["gt"].get<std::string>(), s.image_gt);
    save_png(dir / e["mask"].get<std::string>(), s.region_mask);
    save_png(dir / e["normal"].get<std::string>(), s.shape_maps.normal);
    save_png(dir / e["diffuse"].get<std::string>(), s.shape_maps.diffuse);
    save_png(dir / e["albedo"].get<std::string>(), s.shape_maps.albedo);
  }
  write_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) fail(ErrorKind::IoError, "no dataset manifest at " + path.string());
  const auto m = nlohmann::json::parse(read_file(path));
  if (m.value("format", "") != "sdgan-sprites") fail(ErrorKind::FormatError, path.string() + " is not a sprite dataset");
  Dataset d;
  d.resolution = m.at("resolution").get<int>();
  d.seed = m.at("seed").get<std::uint64_t>();
  d.mix = m.at("attribute_mix").get<AttributeMix>();
  for (const auto& e : m.at("samples")) {
    SpriteSample s;
    s.spec = FaceSpec::from_json(e.at("spec"));
    s.attribute_id = e.at("attribute").get<std::string>();
    s.image_base = load_png(dir / e.at("image").get<std::string>());
    s.image_gt = load_png(dir / e.at("gt").get<std::string>());
    s.region_mask = load_mask_png(dir / e.at("mask").get<std::string>());
    s.shape_maps.normal = load_png(dir / e.at("normal").get<std::string>());
    s.shape_maps.diffuse = load_png(dir / e.at("diffuse").get<std::string>());
    s.shape_maps.albedo = load_png(dir / e.at("albedo").get<std::string>());
    check_image(s.image_base, d.resolution);
    d.samples.push_back(std::move(s));
  }
  return d;
}

nlohmann::json IngestManifest::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& e : entries) list.push_back({{"path", e.path}, {"label", e.label}});
  return {{"format", "sdgan-ingest"},
          {"entries", list},
          {"stats", {{"images", entries.size()}, {"skipped", skipped}}},
          {"warnings", warnings}};
}

IngestManifest ingest_external(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  require(fs::is_directory(dir), ErrorKind::IoError, dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());

  IngestManifest m;
  for (const auto& f : files) {
    const fs::path rel = fs::relative(f, dir);
    std::string ext = f.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".png") {
      ++m.skipped;
      m.warnings.push_back("skipped non-image file " + rel.string());
      std::cerr << "warning: skipped non-image file " << rel.string() << "\n";
      continue;
    }
    if (!rel.has_parent_path()) {
      ++m.skipped;
      m.warnings.push_back("skipped unlabeled image " + rel.string());
      continue;
    }
    load_png(f);  // throws UnreadableImage
    m.entries.push_back({rel.generic_string(), rel.begin()->string()});
  }
  require(!m.entries.empty(), ErrorKind::EmptyDirectory, "no labeled images under " + dir.string());
  return m;
}

}  // namespace sdgan::sprite

#include "sdgan/prior_basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace sdgan {

VectorX<float> sample_z(int latent_dim, std::uint64_t seed, std::size_t index) {
  std::mt19937_64 rng(sprite::derive_seed(seed, index));
  return standard_normal(latent_dim, rng);
}

std::vector<ScoredLatent> sample_scored_latents(const GeneratorModel& generator, const AttributePredictor& predictor,
                                                std::size_t n, std::uint64_t seed) {
  require(generator.frozen(), ErrorKind::InvalidArgument, "latent scoring needs a frozen generator");
  std::vector<ScoredLatent> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto w = generator.map_latent({sample_z(generator.config().latent_dim, seed, i), LatentSpace::Z});
    const double conf = predict_confidence(predictor, generator.synthesize(w));
    out.push_back({i, w, conf});
  }
  return out;
}

LabeledLatents select_extremes(const std::vector<ScoredLatent>& pairs, std::size_t k_pos, std::size_t k_neg) {
  require(k_pos + k_neg <= pairs.size(), ErrorKind::InsufficientSamples,
          "asked for " + std::to_string(k_pos) + "+" + std::to_string(k_neg) + " extremes from " +
              std::to_string(pairs.size()) + " samples");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pairs[a].conf != pairs[b].conf) return pairs[a].conf > pairs[b].conf;
    return pairs[a].index < pairs[b].index;
  });
  LabeledLatents out;
  const auto take = [&](std::size_t pos, int label) {
    out.x.push_back(pairs[order[pos]].w.values);
    out.y.push_back(label);
    out.source.push_back(pairs[order[pos]].index);
  };
  for (std::size_t i = 0; i < k_pos; ++i) take(i, +1);
  for (std::size_t i = pairs.size() - k_neg; i < pairs.size(); ++i) take(i, -1);
  return out;
}

BoundaryFit fit_boundary(const LabeledLatents& data, const SvmConfig& config, const std::string& attribute_id) {
  require(data.x.size() == data.y.size(), ErrorKind::LengthMismatch, "latents and labels differ in count");
  const bool has_pos = std::count(data.y.begin(), data.y.end(), 1) > 0;
  const bool has_neg = std::count(data.y.begin(), data.y.end(), -1) > 0;
  require(has_pos && has_neg, ErrorKind::SingleClass, "boundary fitting needs both classes");
  const auto n = static_cast<Eigen::Index>(data.x.size());
  const Eigen::Index d = data.x.front().size();

  VectorX<double> mu = VectorX<double>::Zero(d);
  for (const auto& x : data.x) {
    require(x.size() == d, ErrorKind::DimensionMismatch, "latents differ in dimension");
    mu += x.cast<double>();
  }
  mu /= static_cast<double>(n);
  MatrixX<double> xs(n, d + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    xs.row(i).head(d) = (data.x[static_cast<std::size_t>(i)].cast<double>() - mu).transpose();
    xs(i, d) = config.bias_feature;
  }
  const VectorX<double> qii = xs.rowwise().squaredNorm();
  VectorX<double> y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = data.y[static_cast<std::size_t>(i)];

  VectorX<double> alpha = VectorX<double>::Zero(n);
  VectorX<double> w = VectorX<double>::Zero(d + 1);
  const double c = config.c;
  BoundaryFit fit;
  bool converged = false;
  for (int epoch = 0; epoch < config.max_epochs && !converged; ++epoch) {
    double max_pg = -std::numeric_limits<double>::infinity();
    double min_pg = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      const double g = y[i] * xs.row(i).dot(w) - 1.0;
      double pg = g;
      if (alpha[i] <= 0.0)
        pg = std::min(g, 0.0);
      else if (alpha[i] >= c)
        pg = std::max(g, 0.0);
      max_pg = std::max(max_pg, pg);
      min_pg = std::min(min_pg, pg);
      if (std::abs(pg) > 1e-15) {
        const double old = alpha[i];
        alpha[i] = std::clamp(old - g / qii[i], 0.0, c);
        w += (alpha[i] - old) * y[i] * xs.row(i).transpose();
      }
    }
    fit.epochs = epoch + 1;
    fit.violation = max_pg - min_pg;
    converged = fit.violation <= config.tolerance;
  }

  const VectorX<double> margins = (xs * w).cwiseProduct(y);
  fit.primal = 0.5 * w.squaredNorm() + c * (1.0 - margins.array()).max(0.0).sum();
  fit.dual = alpha.sum() - 0.5 * w.squaredNorm();
  if (!converged)
    fail(ErrorKind::NonConvergence, "SVM stopped after " + std::to_string(fit.epochs) + " epochs with violation " +
                                        std::to_string(fit.violation) + " (primal " + std::to_string(fit.primal) +
                                        ", dual " + std::to_string(fit.dual) + ")");

  const VectorX<double> wv = w.head(d);
  const double norm = wv.norm();
  require(norm >= 1e-12, ErrorKind::ZeroVector, "SVM weight vector vanished");
  fit.basis.attribute_id = attribute_id;
  fit.basis.direction = normalize_direction(wv).cast<float>();
  fit.basis.length = 0.0f;
  fit.basis.boundary_bias = static_cast<float>((w[d] * config.bias_feature - wv.dot(mu)) / norm);
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) correct += margins[i] > 0.0;
  fit.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return fit;
}

double signed_distance(const SemanticBasis& basis, const VectorX<float>& w) {
  require(w.size() == basis.direction.size(), ErrorKind::DimensionMismatch, "latent vs basis dimension");
  return basis.direction.cast<double>().dot(w.cast<double>()) + basis.boundary_bias;
}

nlohmann::json ScoreBreakdown::to_json() const {
  return {{"eta", eta},           {"det_term", det_term}, {"inside_term", inside_term},
          {"outside_term", outside_term}, {"total", total},       {"lambda", lambda}};
}

ScoreBreakdown ScoreBreakdown::from_json(const nlohmann::json& j) {
  ScoreBreakdown b;
  b.eta = j.at("eta");
  b.det_term = j.at("det_term");
  b.inside_term = j.at("inside_term");
  b.outside_term = j.at("outside_term");
  b.total = j.at("total");
  b.lambda = j.at("lambda");
  return b;
}

ScoreBreakdown make_breakdown(double eta, double det, double inside, double outside, double lambda) {
  ScoreBreakdown b{eta, det, inside, outside, 0.0, lambda};
  b.total = b.recompose();
  return b;
}

std::pair<double, double> masked_terms(const Tensor<float>& a, const Tensor<float>& b, const RegionMask& mask,
                                       MaskedReduction reduction) {
  require_same_shape(a, b, "masked terms");
  require(a.rank() == 3 && a.dim(1) == mask.height && a.dim(2) == mask.width, ErrorKind::ShapeMismatch,
          "mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) + " vs image " +
              shape_string(a.shape()));
  double in = 0.0, out = 0.0;
  std::size_t n_in = 0, n_out = 0;
  for (int c = 0; c < a.dim(0); ++c)
    for (int y = 0; y < mask.height; ++y)
      for (int x = 0; x < mask.width; ++x) {
        const double diff = static_cast<double>(a.at(c, y, x)) - static_cast<double>(b.at(c, y, x));
        if (mask.at(y, x)) {
          in += diff * diff;
          ++n_in;
        } else {
          out += diff * diff;
          ++n_out;
        }
      }
  if (reduction == MaskedReduction::Mean) {
    in = n_in ? in / static_cast<double>(n_in) : 0.0;
    out = n_out ? out / static_cast<double>(n_out) : 0.0;
  }
  return {in, out};
}

std::size_t GridSpec::count() const {
  require(step > 0.0 && hi >= lo, ErrorKind::InvalidArgument, "grid needs step > 0 and hi >= lo");
  return static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
}

std::vector<double> GridSpec::points() const {
  std::vector<double> out(count());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = at(k);
  return out;
}

std::string GridSpec::to_string() const {
  std::ostringstream os;
  os << lo << ":" << hi << ":" << step;
  return os.str();
}

GridSpec GridSpec::parse(const std::string& text) {
  GridSpec g;
  char c1 = 0, c2 = 0;
  std::istringstream is(text);
  if (!(is >> g.lo >> c1 >> g.hi >> c2 >> g.step) || c1 != ':' || c2 != ':' || !is.eof())
    fail(ErrorKind::InvalidArgument, "grid must look like lo:hi:step, got '" + text + "'");
  g.count();
  return g;
}

EditScorer::EditScorer(const GeneratorModel& generator, const AttributePredictor& detector, const LatentCode<float>& w,
                       const VectorX<float>& direction, const RegionMask& mask, double lambda,
                       MaskedReduction reduction)
    : generator_(generator),
      detector_(detector),
      w_(w),
      direction_(direction),
      mask_(mask),
      lambda_(lambda),
      reduction_(reduction) {
  check_latent(w, generator.config().latent_dim);
  require(direction.size() == w.dim(), ErrorKind::ShapeMismatch, "direction vs latent dimension");
  require(std::abs(direction.cast<double>().norm() - 1.0) < 1e-4, ErrorKind::InvalidArgument,
          "score direction must be unit length");
  require(mask.height == generator.config().resolution && mask.width == generator.config().resolution,
          ErrorKind::ShapeMismatch, "region mask resolution differs from the generator's");
  base_ = generator.synthesize(w);
}

ScoreBreakdown EditScorer::operator()(double eta) const {
  LatentCode<float> moved{w_.values + static_cast<float>(eta) * direction_, LatentSpace::W};
  const ImageTensor edited = generator_.synthesize(moved);
  const auto [inside, outside] = masked_terms(edited, base_, mask_, reduction_);
  return make_breakdown(eta, predict_confidence(detector_, edited), inside, outside, lambda_);
}

ScoreBreakdown score_edit(const GeneratorModel& generator, const AttributePredictor& detector,
                          const LatentCode<float>& w, const VectorX<float>& direction, double eta,
                          const RegionMask& mask, double lambda, MaskedReduction reduction) {
  return EditScorer(generator, detector, w, direction, mask, lambda, reduction)(eta);
}

std::size_t argmax_total(const std::vector<ScoreBreakdown>& breakdowns) {
  require(!breakdowns.empty(), ErrorKind::InvalidArgument, "argmax over an empty grid");
  std::size_t best = 0;
  for (std::size_t k = 1; k < breakdowns.size(); ++k) {
    const auto& b = breakdowns[k];
    const auto& cur = breakdowns[best];
    if (b.total > cur.total || (b.total == cur.total && b.eta < cur.eta)) best = k;
  }
  return best;
}

LengthSearch search_optimal_length(const ScoreFn& score, const SemanticBasis& direction, const GridSpec& grid) {
  LengthSearch out;
  for (double eta : grid.points()) out.breakdowns.push_back(score(eta));
  const std::size_t k = argmax_total(out.breakdowns);
  out.eta_m = out.breakdowns[k].eta;
  out.basis = direction;
  out.basis.length = static_cast<float>(out.eta_m);
  return out;
}

LengthSearch search_optimal_length(const GeneratorModel& generator, const AttributePredictor& detector,
                                   const LatentCode<float>& w, const SemanticBasis& direction, const RegionMask& mask,
                                   const GridSpec& grid, double lambda) {
  const EditScorer scorer(generator, detector, w, direction.direction, mask, lambda);
  return search_optimal_length([&](double eta) { return scorer(eta); }, direction, grid);
}

LengthSearch search_global_length(const std::vector<ScoreFn>& scores, const SemanticBasis& direction,
                                  const GridSpec& grid) {
  require(!scores.empty(), ErrorKind::EmptySamples, "global length search needs at least one latent");
  LengthSearch out;
  for (double eta : grid.points()) {
    ScoreBreakdown mean{eta, 0, 0, 0, 0, 0};
    for (const auto& s : scores) {
      const auto b = s(eta);
      mean.det_term += b.det_term;
      mean.inside_term += b.inside_term;
      mean.outside_term += b.outside_term;
      mean.lambda = b.lambda;
    }
    const auto n = static_cast<double>(scores.size());
    out.breakdowns.push_back(make_breakdown(eta, mean.det_term / n, mean.inside_term / n, mean.outside_term / n, mean.lambda));
  }
  out.eta_m = out.breakdowns[argmax_total(out.breakdowns)].eta;
  out.basis = direction;
  out.basis.length = static_cast<float>(out.eta_m);
  return out;
}

namespace {

double luminance(const ImageTensor& img, double y, double x) {
  const int h = img.dim(1), w = img.dim(2);
  y = std::clamp(y, 0.0, h - 1.0);
  x = std::clamp(x, 0.0, w - 1.0);
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - y0, fx = x - x0;
  const auto lum = [&](int yy, int xx) { return (img.at(0, yy, xx) + img.at(1, yy, xx) + img.at(2, yy, xx)) / 3.0; };
  return (1 - fy) * ((1 - fx) * lum(y0, x0) + fx * lum(y0, x1)) + fy * ((1 - fx) * lum(y1, x0) + fx * lum(y1, x1));
}

double iou(const RegionMask& a, const RegionMask& b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += a.bits[i] && b.bits[i];
    uni += a.bits[i] || b.bits[i];
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

constexpr double kSilhouetteDistance = 0.1;
constexpr double kMinSilhouetteIou = 0.5;

}  // namespace

FaceGeometry estimate_face_geometry(const ImageTensor& image) {
  require(image.rank() == 3 && image.dim(0) == 3 && image.dim(1) == image.dim(2), ErrorKind::ShapeMismatch,
          "geometry estimation expects a square (3,H,W) image");
  const int n = image.dim(1);
  const auto bg = sprite::background_color();
  RegionMask silhouette(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double d2 = 0.0;
      for (int c = 0; c < 3; ++c) d2 += std::pow(image.at(c, y, x) - bg[static_cast<std::size_t>(c)], 2);
      silhouette.at(y, x) = std::sqrt(d2) > kSilhouetteDistance ? 1 : 0;
    }

  FaceGeometry best;
  best.silhouette_iou = -1.0;
  sprite::FaceSpec probe;
  for (int si = 0; si <= 30; ++si)
    for (int pi = 0; pi <= 40; ++pi) {
      probe.face_scale = 0.70 + 0.01 * si;
      probe.pose_shift = -0.1 + 0.005 * pi;
      const double score = iou(sprite::face_region(probe, n), silhouette);
      if (score > best.silhouette_iou) {
        best.silhouette_iou = score;
        best.face_scale = probe.face_scale;
        best.pose_shift = probe.pose_shift;
      }
    }
  if (best.silhouette_iou < kMinSilhouetteIou)
    fail(ErrorKind::PlacementFailure,
         "face silhouette match " + std::to_string(best.silhouette_iou) + " below " + std::to_string(kMinSilhouetteIou));

  // Eye centres in pixel coordinates follow the sprite geometry.
  const double k = best.face_scale;
  const double eye_y = (0.02 - 0.12 * k) * n + 0.5 * n - 0.5;
  double darkest = std::numeric_limits<double>::infinity();
  for (int ei = 0; ei <= 40; ++ei) {
    const double es = 0.2 + 0.005 * ei;
    const double dx = 0.5 * es * k * n;
    const double cx = best.pose_shift * n + 0.5 * n - 0.5;
    const double lum = luminance(image, eye_y, cx - dx) + luminance(image, eye_y, cx + dx);
    if (lum < darkest) {
      darkest = lum;
      best.eye_spacing = es;
    }
  }
  return best;
}

sprite::FaceSpec estimate_face_spec(const ImageTensor& image) {
  const FaceGeometry geo = estimate_face_geometry(image);
  sprite::FaceSpec spec;
  spec.face_scale = geo.face_scale;
  spec.pose_shift = geo.pose_shift;
  spec.eye_spacing = geo.eye_spacing;
  const int n = image.dim(1);
  const auto error = [&](double hue, double brightness) {
    sprite::FaceSpec s = spec;
    s.face_hue = hue;
    s.brightness = brightness;
    return (sprite::render_base_face(s, n).image.data() - image.data()).squaredNorm();
  };
  double hue = 0.5, bright = 0.75;
  double hue_step = 0.1, bright_step = 0.05;
  for (int round = 0; round < 3; ++round) {
    double best = std::numeric_limits<double>::infinity();
    const double h0 = hue, b0 = bright;
    for (int i = -5; i <= 5; ++i)
      for (int j = -5; j <= 5; ++j) {
        const double h = std::clamp(h0 + i * hue_step, sprite::kHueRange.lo, sprite::kHueRange.hi);
        const double b = std::clamp(b0 + j * bright_step, sprite::kBrightnessRange.lo, sprite::kBrightnessRange.hi);
        const double e = error(h, b);
        if (e < best) {
          best = e;
          hue = h;
          bright = b;
        }
      }
    hue_step /= 5;
    bright_step /= 5;
  }
  spec.face_hue = hue;
  spec.brightness = bright;
  return spec;
}

namespace {

// 8-neighbour dilation; absorbs the placement error of the estimated geometry.
RegionMask dilate(const RegionMask& m) {
  RegionMask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < m.height && xx >= 0 && xx < m.width) out.at(yy, xx) = 1;
        }
    }
  return out;
}

}  // namespace

RegionMask attribute_region_mask(const ImageTensor& image, const std::string& attribute_id, RegionMode mode) {
  sprite::check_discrete_attribute(attribute_id);
  const FaceGeometry geo = estimate_face_geometry(image);
  sprite::FaceSpec spec;
  spec.face_scale = geo.face_scale;
  spec.pose_shift = geo.pose_shift;
  spec.eye_spacing = geo.eye_spacing;
  const int n = image.dim(1);
  RegionMask m = mode == RegionMode::WholeFace ? sprite::face_region(spec, n)
                                               : dilate(sprite::attribute_footprint(spec, attribute_id, n));
  require(m.area() > 0, ErrorKind::PlacementFailure, "estimated region for '" + attribute_id + "' is empty");
  return m;
}

RegionMask attribute_region_mask(const GeneratorModel& generator, const LatentCode<float>& w,
                                 const std::string& attribute_id, RegionMode mode) {
  sprite::check_discrete_attribute(attribute_id);
  return attribute_region_mask(generator.synthesize(w), attribute_id, mode);
}

BasisLearnResult learn_basis(const GeneratorModel& generator, const AttributePredictor& predictor,
                             const BasisLearnConfig& config) {
  BasisLearnResult out;
  out.scored = sample_scored_latents(generator, predictor, config.samples, config.seed);
  out.fit = fit_boundary(select_extremes(out.scored, config.k_pos, config.k_neg), config.svm, predictor.attribute_id);
  return out;
}

void save_basis(const std::filesystem::path& path, const SemanticBasis& basis, const nlohmann::json& extra) {
  Tensor<float> t({static_cast<int>(basis.direction.size())}, basis.direction);
  save_tensor(path, t);
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["attribute_id"] = basis.attribute_id;
  meta["eta_m"] = basis.length;
  meta["boundary_bias"] = basis.boundary_bias;
  if (!meta.contains("lambda")) meta["lambda"] = 10.0;
  if (!meta.contains("grid")) meta["grid"] = GridSpec{}.to_string();
  write_file(path.string() + ".json", meta.dump(2) + "\n");
}

SemanticBasis load_basis(const std::filesystem::path& path, nlohmann::json* sidecar) {
  const Tensor<float> t = load_tensor(path);
  require(t.rank() == 1, ErrorKind::FormatError, path.string() + ": basis must be a vector");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(path.string() + ".json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, path.string() + ".json: " + e.what());
  }
  SemanticBasis b;
  b.attribute_id = meta.value("attribute_id", "");
  b.direction = t.data();
  b.length = meta.value("eta_m", 0.0f);
  b.boundary_bias = meta.value("boundary_bias", 0.0f);
  if (sidecar) *sidecar = meta;
  return b;
}

}  // namespace sdgan

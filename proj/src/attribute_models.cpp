#include "sdgan/attribute_models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sdgan {

std::string to_string(PredictorKind kind) {
  return kind == PredictorKind::BinaryPresence ? "binary_presence" : "continuous_regressor";
}

PredictorKind predictor_kind_from_string(const std::string& s) {
  if (s == "binary_presence") return PredictorKind::BinaryPresence;
  if (s == "continuous_regressor") return PredictorKind::ContinuousRegressor;
  fail(ErrorKind::FormatError, "unknown predictor kind '" + s + "'");
}

PredictorKind kind_for_attribute(const std::string& attribute_id) {
  if (sprite::is_discrete_attribute(attribute_id)) return PredictorKind::BinaryPresence;
  const auto& cont = sprite::continuous_attributes();
  if (std::find(cont.begin(), cont.end(), attribute_id) != cont.end()) return PredictorKind::ContinuousRegressor;
  fail(ErrorKind::UnknownAttribute, "unknown attribute '" + attribute_id + "'");
}

double predict_confidence(const AttributePredictor& model, const ImageTensor& image) {
  check_image(image, model.resolution);
  nn::Graph<float> g(false);
  const double p = model.confidence(g, g.input(image)).value()[0];
  return std::clamp(p, 0.0, 1.0);
}

std::vector<double> batch_confidences(const AttributePredictor& model, const std::vector<ImageTensor>& images) {
  for (const auto& img : images) check_image(img, model.resolution);
  std::vector<double> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(predict_confidence(model, img));
  return out;
}

double predict_value(const AttributePredictor& model, const ImageTensor& image) {
  const double p = predict_confidence(model, image);
  if (model.kind == PredictorKind::BinaryPresence) return p;
  return sprite::continuous_range(model.attribute_id).denormalize(p);
}

LabeledImages label_dataset(const sprite::Dataset& dataset, const std::string& attribute_id, double co_occurrence,
                            std::uint64_t seed) {
  const PredictorKind kind = kind_for_attribute(attribute_id);
  LabeledImages out;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    std::mt19937_64 rng(sprite::derive_seed(seed, i));
    auto view = sprite::with_extra_accessories(dataset.samples[i], co_occurrence, rng);
    if (kind == PredictorKind::BinaryPresence)
      out.labels.emplace_back(view.spec.attributes.count(attribute_id) ? 1.0 : 0.0);
    else
      out.labels.emplace_back(sprite::continuous_range(attribute_id).normalize(view.spec.continuous(attribute_id)));
    out.images.push_back(std::move(view.image));
  }
  return out;
}

namespace {

// Random blend toward a 3x3 box blur plus light pixel noise, so scorers
// trained on crisp sprites keep working on the generator's softer output.
ImageTensor augment(const ImageTensor& img, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.02);
  const double mix = u(rng);
  const int h = img.dim(1), w = img.dim(2);
  ImageTensor out = img;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            acc += img.at(c, yy, xx);
            ++n;
          }
        const double v = (1.0 - mix) * img.at(c, y, x) + mix * acc / n + noise(rng);
        out.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return out;
}

double held_out_metric(const AttributePredictor& model, const LabeledImages& data, const std::vector<std::size_t>& idx) {
  if (model.kind == PredictorKind::BinaryPresence) {
    std::size_t correct = 0;
    for (auto i : idx) correct += (predict_confidence(model, data.images[i]) > 0.5) == (*data.labels[i] > 0.5);
    return static_cast<double>(correct) / static_cast<double>(idx.size());
  }
  double mean = 0.0;
  for (auto i : idx) mean += *data.labels[i];
  mean /= static_cast<double>(idx.size());
  double sse = 0.0, sst = 0.0;
  for (auto i : idx) {
    const double y = *data.labels[i];
    const double p = predict_confidence(model, data.images[i]);
    sse += (p - y) * (p - y);
    sst += (y - mean) * (y - mean);
  }
  return sst > 0.0 ? 1.0 - sse / sst : 0.0;
}

}  // namespace

AttributePredictor train_predictor(const LabeledImages& data, const std::string& attribute_id, PredictorKind kind,
                                   ModelKind role, const PredictorTrainConfig& config) {
  require(data.images.size() == data.labels.size(), ErrorKind::LengthMismatch, "images and labels differ in count");
  std::vector<std::size_t> labeled;
  for (std::size_t i = 0; i < data.labels.size(); ++i)
    if (data.labels[i]) labeled.push_back(i);
  require(!labeled.empty(), ErrorKind::MissingLabels, "no labels for attribute '" + attribute_id + "'");

  if (kind == PredictorKind::BinaryPresence) {
    const auto positives = std::count_if(labeled.begin(), labeled.end(), [&](auto i) { return *data.labels[i] > 0.5; });
    require(positives > 0 && positives < static_cast<long>(labeled.size()), ErrorKind::MissingLabels,
            "labels for '" + attribute_id + "' contain a single class");
  } else {
    const auto [lo, hi] = std::minmax_element(labeled.begin(), labeled.end(),
                                              [&](auto a, auto b) { return *data.labels[a] < *data.labels[b]; });
    require(*data.labels[*hi] - *data.labels[*lo] > 1e-6, ErrorKind::MissingLabels,
            "labels for '" + attribute_id + "' have a degenerate range");
  }
  const int resolution = data.images[labeled.front()].dim(1);
  for (auto i : labeled) check_image(data.images[i], resolution);

  std::mt19937_64 split_rng(sprite::derive_seed(config.seed, 0));
  std::shuffle(labeled.begin(), labeled.end(), split_rng);
  const auto n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(config.holdout_fraction * labeled.size())));
  require(labeled.size() > n_hold, ErrorKind::MissingLabels, "too few labeled images to hold out a split");
  std::vector<std::size_t> holdout(labeled.end() - static_cast<long>(n_hold), labeled.end());
  std::vector<std::size_t> train(labeled.begin(), labeled.end() - static_cast<long>(n_hold));

  AttributePredictor model(attribute_id, kind, role, resolution, sprite::derive_seed(config.seed, 1));
  nn::Adam<float> opt({config.lr, 0.9, 0.999, 1e-8});
  std::uniform_real_distribution<double> u(0.0, 1.0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::mt19937_64 rng(sprite::derive_seed(config.seed, 100 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(config.batch_size));
      const float inv = 1.0f / static_cast<float>(end - start);
      nn::GradBuffer<float> grads;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = train[k];
        const ImageTensor img = u(rng) < config.augment_probability ? augment(data.images[i], rng) : data.images[i];
        nn::Graph<float> g;
        auto logit = model.logit(g, g.input(img));
        const auto y = static_cast<float>(*data.labels[i]);
        auto loss = kind == PredictorKind::BinaryPresence
                        ? nn::bce_with_logit(logit, y)
                        : nn::mse(nn::sigmoid(logit), g.input(Tensor<float>::constant({1}, y)));
        g.backward(loss);
        grads.add(g.param_grads(), inv);
      }
      if (!grads.all_finite()) fail(ErrorKind::TrainingFailed, "non-finite gradient training '" + attribute_id + "'");
      opt.step(model.params, grads);
    }
  }

  const double metric = held_out_metric(model, data, holdout);
  const bool binary = kind == PredictorKind::BinaryPresence;
  model.metrics = {{binary ? "held_out_accuracy" : "held_out_r2", metric}, {"held_out_count", holdout.size()},
                   {"train_count", train.size()}, {"seed", config.seed}};
  const double need = binary ? config.min_accuracy : config.min_r2;
  if (!(metric >= need))
    fail(ErrorKind::TrainingFailed, attribute_id + ": held-out " + (binary ? "accuracy " : "R2 ") +
                                        std::to_string(metric) + " below " + std::to_string(need));
  return model;
}

void save_predictor(const AttributePredictor& model, const std::filesystem::path& dir) {
  nlohmann::json cfg = {{"attribute_id", model.attribute_id},
                        {"kind", to_string(model.kind)},
                        {"resolution", model.resolution},
                        {"metrics", model.metrics}};
  write_checkpoint(dir, model.role, model.params.export_tensors(), cfg);
}

AttributePredictor load_predictor(const std::filesystem::path& dir) {
  const Checkpoint ck = read_checkpoint(dir);
  const auto role = ck.manifest.model_kind;
  require(role == ModelKind::Predictor || role == ModelKind::Detector, ErrorKind::FormatError,
          dir.string() + " holds a " + to_string(role) + " checkpoint, not a predictor");
  const auto& cfg = ck.manifest.config_snapshot;
  require(cfg.contains("attribute_id") && cfg.contains("kind") && cfg.contains("resolution"), ErrorKind::FormatError,
          dir.string() + ": predictor config incomplete");
  AttributePredictor model(cfg["attribute_id"].get<std::string>(), predictor_kind_from_string(cfg["kind"]), role,
                           cfg["resolution"].get<int>(), 0);
  model.params.import_tensors(ck.tensors);
  model.metrics = cfg.value("metrics", nlohmann::json::object());
  return model;
}

}  // namespace sdgan

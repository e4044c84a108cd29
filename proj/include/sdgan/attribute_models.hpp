#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdgan/image.hpp"
#include "sdgan/nn.hpp"
#include "sdgan/sprite.hpp"
#include "sdgan/tensor_file.hpp"

namespace sdgan {

enum class PredictorKind { BinaryPresence, ContinuousRegressor };

std::string to_string(PredictorKind kind);
PredictorKind predictor_kind_from_string(const std::string& s);

// Confidence scorer: three stride-2 convs, flatten, Linear(.,32), SiLU,
// Linear(32,1), sigmoid. Continuous regressors predict the attribute value
// normalized to [0,1] over its labeled range.
template <typename Scalar>
class AttributeModel {
 public:
  using G = nn::Graph<Scalar>;
  using V = nn::Var<Scalar>;

  AttributeModel() = default;
  AttributeModel(std::string attribute_id, PredictorKind kind, ModelKind role, int resolution, std::uint64_t seed)
      : attribute_id(std::move(attribute_id)), kind(kind), role(role), resolution(resolution) {
    require(resolution >= 8 && resolution % 8 == 0, ErrorKind::InvalidArgument, "predictor resolution must be a multiple of 8");
    std::mt19937_64 rng(seed);
    nn::add_conv(params, "p.0", 3, 16, 3, rng);
    nn::add_conv(params, "p.1", 16, 32, 3, rng);
    nn::add_conv(params, "p.2", 32, 32, 3, rng);
    const int r = resolution / 8;
    nn::add_linear(params, "p.fc", 32 * r * r, 32, rng);
    nn::add_linear(params, "p.out", 32, 1, rng, 1.0);
  }

  std::string attribute_id;
  PredictorKind kind = PredictorKind::BinaryPresence;
  ModelKind role = ModelKind::Predictor;
  int resolution = 32;
  nn::ParamSet<Scalar> params;
  nlohmann::json metrics = nlohmann::json::object();

  V logit(G& g, V image) const {
    require(image.value().rank() == 3 && image.shape()[0] == 3, ErrorKind::ShapeMismatch,
            "predictor input must be (3,H,W), got " + shape_string(image.shape()));
    require(image.shape()[1] == resolution && image.shape()[2] == resolution, ErrorKind::ResolutionMismatch,
            "image is " + std::to_string(image.shape()[1]) + "x" + std::to_string(image.shape()[2]) +
                ", predictor expects " + std::to_string(resolution));
    V h = nn::leaky_relu(nn::apply_conv(g, params, "p.0", image, 2, 1));
    h = nn::leaky_relu(nn::apply_conv(g, params, "p.1", h, 2, 1));
    h = nn::leaky_relu(nn::apply_conv(g, params, "p.2", h, 2, 1));
    h = nn::silu(nn::apply_linear(g, params, "p.fc", nn::reshape(h, {static_cast<int>(h.size())})));
    return nn::apply_linear(g, params, "p.out", h);
  }

  V confidence(G& g, V image) const { return nn::sigmoid(logit(g, image)); }

  template <typename Other>
  AttributeModel<Other> cast() const {
    AttributeModel<Other> out;
    out.attribute_id = attribute_id;
    out.kind = kind;
    out.role = role;
    out.resolution = resolution;
    out.params = params.template cast<Other>();
    out.metrics = metrics;
    return out;
  }
};

using AttributePredictor = AttributeModel<float>;

double predict_confidence(const AttributePredictor& model, const ImageTensor& image);
std::vector<double> batch_confidences(const AttributePredictor& model, const std::vector<ImageTensor>& images);

// Value in the attribute's labeled range (continuous) or the confidence (binary).
double predict_value(const AttributePredictor& model, const ImageTensor& image);

struct LabeledImages {
  std::vector<ImageTensor> images;
  std::vector<std::optional<double>> labels;
};

// Sprite images labeled for one attribute: presence for accessories, the
// normalized FaceSpec value for continuous attributes. Extra accessories are
// composited with probability co_occurrence each.
LabeledImages label_dataset(const sprite::Dataset& dataset, const std::string& attribute_id,
                            double co_occurrence = 0.3, std::uint64_t seed = 5);

PredictorKind kind_for_attribute(const std::string& attribute_id);

struct PredictorTrainConfig {
  int epochs = 8;
  int batch_size = 32;
  double lr = 2e-3;
  double holdout_fraction = 0.1;
  double augment_probability = 0.5;
  std::uint64_t seed = 11;
  double min_accuracy = 0.95;
  double min_r2 = 0.9;
};

// Throws MissingLabels (no labels, one class, or a degenerate value range) and
// TrainingFailed (held-out accuracy or R2 below threshold).
AttributePredictor train_predictor(const LabeledImages& data, const std::string& attribute_id, PredictorKind kind,
                                   ModelKind role, const PredictorTrainConfig& config);

void save_predictor(const AttributePredictor& model, const std::filesystem::path& dir);
AttributePredictor load_predictor(const std::filesystem::path& dir);

}  // namespace sdgan

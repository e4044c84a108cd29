#include "sdgan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sdgan/training.hpp"

namespace sdgan {

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheckResult check_fusion_gradients(std::uint64_t seed, int random_weights, double step) {
  using D = double;
  std::mt19937_64 rng(seed);
  StyleGenerator<D> gen(GeneratorConfig{}, sprite::derive_seed(seed, 1));
  gen.freeze();
  FusionModel<D> fusion(FusionConfig{}, sprite::derive_seed(seed, 2));
  AttributeModel<D> det("face_mask", PredictorKind::BinaryPresence, ModelKind::Detector, 32, sprite::derive_seed(seed, 3));
  det.params.set_trainable(false);
  const auto feat = PerceptualNet::standard().cast<D>();

  std::uniform_real_distribution<D> u(0.0, 1.0);
  std::normal_distribution<D> n(0.0, 1.0);
  const auto image = [&](int c) {
    Tensor<D> t({c, 32, 32});
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = u(rng);
    return t;
  };
  const auto vec = [&](D scale) {
    Tensor<D> t({64});
    for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = scale * n(rng);
    return t;
  };
  struct Item {
    Tensor<D> w, nb, face, maps, gt;
  };
  std::vector<Item> batch;
  for (int i = 0; i < 2; ++i) batch.push_back({vec(1.0), vec(0.3), image(3), image(9), image(3)});
  const auto attr_img = image(3);

  const auto loss = [&](nn::GradBuffer<D>* grads) {
    nn::Graph<D> g(grads != nullptr);
    const auto attr = fusion.encode_attribute(g, g.input(attr_img));
    auto total = g.constant(0.0);
    for (const auto& it : batch)
      total = total + edit_losses(g, gen, fusion, det, feat, attr, it.w, it.nb, it.face, it.maps, it.gt, 0.8, 0.5).all;
    total = nn::scale(total, 1.0 / static_cast<D>(batch.size()));
    if (grads) {
      g.backward(total);
      grads->add(g.param_grads());
    }
    return total.value()[0];
  };

  nn::GradBuffer<D> grads;
  loss(&grads);

  std::vector<std::pair<std::string, Eigen::Index>> picks = {{"fuse.alpha1", 0}, {"fuse.alpha2", 0}};
  std::vector<const nn::Parameter<D>*> pool;
  Eigen::Index total_size = 0;
  for (const auto& p : fusion.params().all())
    if (p.name != "fuse.alpha1" && p.name != "fuse.alpha2") {
      pool.push_back(&p);
      total_size += p.value.size();
    }
  std::uniform_int_distribution<Eigen::Index> pick(0, total_size - 1);
  for (int k = 0; k < random_weights; ++k) {
    Eigen::Index flat = pick(rng);
    for (const auto* p : pool) {
      if (flat < p->value.size()) {
        picks.emplace_back(p->name, flat);
        break;
      }
      flat -= p->value.size();
    }
  }

  GradCheckResult result;
  result.seed = seed;
  for (const auto& [name, index] : picks) {
    auto& p = fusion.params()[name];
    const auto* g = grads.find(&p);
    const D analytic = g ? (*g)[index] : 0.0;
    const D original = p.value[index];
    p.value[index] = original + step;
    const D up = loss(nullptr);
    p.value[index] = original - step;
    const D down = loss(nullptr);
    p.value[index] = original;
    const D numeric = (up - down) / (2.0 * step);
    GradCheckEntry e{name, index, analytic, numeric, relative_error(analytic, numeric)};
    result.max_rel_error = std::max(result.max_rel_error, e.rel_error);
    result.entries.push_back(e);
  }
  return result;
}

}  // namespace sdgan

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sdgan {

struct GradCheckEntry {
  std::string name;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  std::uint64_t seed = 0;
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
};

// rel = |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-12);

// Central differences of the batch L_all at 64-bit against backprop, for
// fuse.alpha1, fuse.alpha2 and `random_weights` entries drawn uniformly from
// the other fusion parameters. Models and the two-sample batch are random.
GradCheckResult check_fusion_gradients(std::uint64_t seed, int random_weights = 10, double step = 1e-3);

}  // namespace sdgan

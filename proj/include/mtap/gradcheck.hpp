// Finite-difference gradient oracle: compares reverse-mode gradients against
// central differences of a deterministic loss builder.
#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "mtap/autodiff.hpp"

namespace mtap {

// Named reference to a parameter tensor owned elsewhere. The builder must
// lift these grids (in the same order) as leaves each time it is invoked.
struct ParamRef {
  std::string name;
  Grid* grid;
};

struct BuiltLoss {
  Var loss;
  std::vector<Var> params;  // leaf Vars aligned with the ParamRef list
};

using LossBuilder = std::function<BuiltLoss(Tape&)>;

struct GradCheckOptions {
  double step = 1e-5;         // central-difference perturbation
  int samples_per_group = 0;  // 0 checks every element of every tensor
  uint64_t sample_seed = 0;
};

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  int elements_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_err = 0.0;
  // Smallest kink margin seen across the analytic and all perturbed passes.
  double kink_margin = std::numeric_limits<double>::infinity();
  bool passed(double tolerance) const { return max_rel_err <= tolerance; }
};

// Relative error |a-b| / max(1e-5, |a|+|b|); the floor absorbs the
// finite-difference roundoff on near-zero gradients.
double rel_err(double a, double b);

GradCheckReport grad_check(const std::vector<ParamRef>& params, const LossBuilder& build,
                           const GradCheckOptions& opt = {});

}  // namespace mtap

#include "mtap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mtap {

double rel_err(double a, double b) {
  // The denominator floor makes this a mixed tolerance: gradients below the
  // floor are compared absolutely. Central differences of a sum-of-many-terms
  // loss carry ~|loss|*eps/(2h) of roundoff (~1e-9 here), so differences that
  // small are attributable to the oracle, not the gradient. A genuinely wrong
  // small gradient (off by a factor) still fails by orders of magnitude.
  return std::fabs(a - b) / std::max(1e-5, std::fabs(a) + std::fabs(b));
}

namespace {

double loss_value(const LossBuilder& build, double* min_margin) {
  Tape tape;
  tape.set_recording(false);
  BuiltLoss b = build(tape);
  const Grid& v = tape.value(b.loss);
  if (v.size() != 1) throw std::invalid_argument("grad_check: loss must be scalar");
  *min_margin = std::min(*min_margin, tape.kink_margin());
  return v[0];
}

}  // namespace

GradCheckReport grad_check(const std::vector<ParamRef>& params, const LossBuilder& build,
                           const GradCheckOptions& opt) {
  GradCheckReport report;
  if (params.empty()) return report;

  // Analytic pass.
  std::vector<Grid> analytic;
  {
    Tape tape;
    BuiltLoss b = build(tape);
    if (b.params.size() != params.size())
      throw std::invalid_argument("grad_check: builder lifted " +
                                  std::to_string(b.params.size()) + " params, expected " +
                                  std::to_string(params.size()));
    tape.backward(b.loss);
    analytic.reserve(params.size());
    for (const Var& p : b.params) analytic.push_back(tape.grad(p));
    report.kink_margin = std::min(report.kink_margin, tape.kink_margin());
  }

  const double h = opt.step;
  for (size_t gi = 0; gi < params.size(); ++gi) {
    Grid& g = *params[gi].grid;
    if (!same_shape(g, analytic[gi]))
      throw std::invalid_argument("grad_check: builder lifted a different shape for " +
                                  params[gi].name);
    std::vector<int> elems;
    if (opt.samples_per_group <= 0 || opt.samples_per_group >= g.size()) {
      elems.resize(static_cast<size_t>(g.size()));
      std::iota(elems.begin(), elems.end(), 0);
    } else {
      // Distinct sampled positions, deterministic per group.
      std::mt19937_64 rng(opt.sample_seed ^ (0x9e3779b97f4a7c15ull * (gi + 1)));
      std::vector<int> all(static_cast<size_t>(g.size()));
      std::iota(all.begin(), all.end(), 0);
      for (int i = 0; i < opt.samples_per_group; ++i) {
        std::uniform_int_distribution<int> d(i, g.size() - 1);
        std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(d(rng))]);
        elems.push_back(all[static_cast<size_t>(i)]);
      }
    }

    GradCheckGroup group;
    group.name = params[gi].name;
    for (int e : elems) {
      const double saved = g[e];
      g[e] = saved + h;
      const double lp = loss_value(build, &report.kink_margin);
      g[e] = saved - h;
      const double lm = loss_value(build, &report.kink_margin);
      g[e] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      group.max_rel_err = std::max(group.max_rel_err, rel_err(analytic[gi][e], fd));
      ++group.elements_checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
    report.groups.push_back(std::move(group));
  }
  return report;
}

}  // namespace mtap

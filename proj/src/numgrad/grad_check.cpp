#include "loopsr/numgrad/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "loopsr/common/error.hpp"
#include "loopsr/common/rng.hpp"

namespace loopsr::numgrad {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

double evaluate_loss(const LossBuilder& build, const ParamSet& params) {
  Graph g(params);
  const double f = g.scalar(build(g));
  if (!std::isfinite(f)) throw NumericalError("grad_check", "loss is not finite");
  return f;
}

ParamSet reverse_gradients(const LossBuilder& build, const ParamSet& params) {
  Graph g(params);
  g.backward(build(g));
  return g.gradients();
}

GradCheckResult compare_with_central_differences(const LossBuilder& build,
                                                 const ParamSet& params,
                                                 const ParamSet& analytic,
                                                 const GradCheckOptions& opts) {
  if (!(opts.step > 0.0)) throw ConfigError("grad_check step must be positive");
  if (!params.same_layout(analytic)) throw DimensionError("grad_check: gradient layout mismatch");
  ParamSet probe = params;
  Rng rng(opts.seed);
  GradCheckResult result;
  for (std::size_t t = 0; t < probe.size(); ++t) {
    auto values = probe.at(t).values();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (opts.max_coords_per_tensor > 0 && coords.size() > opts.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t k : coords) {
      const double saved = values[k];
      auto central = [&](double h) {
        values[k] = saved + h;
        const double up = evaluate_loss(build, probe);
        values[k] = saved - h;
        const double down = evaluate_loss(build, probe);
        values[k] = saved;
        return (up - down) / (2.0 * h);
      };
      const double coarse = central(opts.step);
      const double numeric = opts.scheme == DifferenceScheme::kCentral
                                 ? coarse
                                 : (4.0 * central(0.5 * opts.step) - coarse) / 3.0;
      const double a = analytic.at(t)[k];
      const double err = relative_error(a, numeric);
      ++result.coords_checked;
      if (err > result.max_rel_error || result.coords_checked == 1) {
        result.max_rel_error = err;
        result.worst_param = probe.name(t);
        result.worst_index = k;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const LossBuilder& build, const ParamSet& params,
                           const GradCheckOptions& opts) {
  return compare_with_central_differences(build, params, reverse_gradients(build, params), opts);
}

}  // namespace loopsr::numgrad

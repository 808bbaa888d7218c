#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "loopsr/numgrad/graph.hpp"
#include "loopsr/numgrad/param_set.hpp"

namespace loopsr::numgrad {

// Builds a scalar loss on a graph bound to the parameters under test.
using LossBuilder = std::function<Var(Graph&)>;

enum class DifferenceScheme {
  kCentral,     // (f(t+h) - f(t-h)) / 2h
  kRichardson,  // (4 D(h/2) - D(h)) / 3 over central differences D; O(h^4) truncation
};

struct GradCheckOptions {
  double step = 1e-5;
  DifferenceScheme scheme = DifferenceScheme::kCentral;
  // Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;

  bool passed(double tol) const { return max_rel_error < tol; }
};

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b);

double evaluate_loss(const LossBuilder& build, const ParamSet& params);
ParamSet reverse_gradients(const LossBuilder& build, const ParamSet& params);

// Compares `analytic` against finite differences of the loss, coordinate by
// coordinate.
GradCheckResult compare_with_central_differences(const LossBuilder& build,
                                                 const ParamSet& params,
                                                 const ParamSet& analytic,
                                                 const GradCheckOptions& opts = {});

GradCheckResult grad_check(const LossBuilder& build, const ParamSet& params,
                           const GradCheckOptions& opts = {});

}  // namespace loopsr::numgrad

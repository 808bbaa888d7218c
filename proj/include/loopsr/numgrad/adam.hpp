#pragma once

#include <cstdint>

#include "loopsr/numgrad/param_set.hpp"

namespace loopsr::numgrad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.0;  // global-norm clipping, 0 disables
};

struct AdamState {
  AdamState(const ParamSet& params, AdamConfig cfg);

  AdamConfig config;
  ParamSet first_moment;
  ParamSet second_moment;
  std::uint64_t step = 0;
};

double global_norm(const ParamSet& grads);

// Bias-corrected Adam step in place. Raises DimensionError when the gradient
// or moment layout does not match the parameters.
void adam_update(ParamSet& params, const ParamSet& grads, AdamState& state);

}  // namespace loopsr::numgrad

#include "loopsr/numgrad/adam.hpp"

#include <cmath>

#include "loopsr/common/error.hpp"

namespace loopsr::numgrad {

AdamState::AdamState(const ParamSet& params, AdamConfig cfg)
    : config(cfg), first_moment(params.zeros_like()), second_moment(params.zeros_like()) {}

double global_norm(const ParamSet& grads) {
  double sq = 0.0;
  for (const auto& e : grads) {
    for (double v : e.value.values()) sq += v * v;
  }
  return std::sqrt(sq);
}

void adam_update(ParamSet& params, const ParamSet& grads, AdamState& state) {
  if (!params.same_layout(grads)) throw DimensionError("adam_update: gradient layout mismatch");
  if (!params.same_layout(state.first_moment) || !params.same_layout(state.second_moment)) {
    throw DimensionError("adam_update: optimizer state layout mismatch");
  }
  const AdamConfig& c = state.config;
  double clip = 1.0;
  if (c.max_grad_norm > 0.0) {
    const double norm = global_norm(grads);
    if (norm > c.max_grad_norm) clip = c.max_grad_norm / norm;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params.at(i).values();
    auto g = grads.at(i).values();
    auto m = state.first_moment.at(i).values();
    auto v = state.second_moment.at(i).values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k] * clip;
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
      p[k] -= c.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + c.eps);
    }
  }
}

}  // namespace loopsr::numgrad

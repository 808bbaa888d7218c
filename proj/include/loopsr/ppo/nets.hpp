#pragma once

#include <cstdint>
#include <span>

#include "loopsr/numgrad/graph.hpp"
#include "loopsr/numgrad/param_set.hpp"
#include "loopsr/numgrad/tensor.hpp"
#include "loopsr/terrasim/types.hpp"

namespace loopsr::ppo {

using numgrad::Matrix;

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;
// Per-channel observation scaling in front of the actor: v, a_prev, u_prev, contact.
inline constexpr std::array<double, terrasim::kObsDim> kObsScale{1.0, 0.2, 1.0, 1.0};

// Actor and critic inputs are distinct types, so the actor cannot be handed
// privileged state and the critic cannot be handed bare observations.
struct ObsBatch {
  Matrix rows;  // n x kObsDim
};
struct PrivBatch {
  Matrix rows;  // n x kPrivDim
};

ObsBatch make_obs_batch(std::span<const terrasim::Observation> obs);
PrivBatch make_priv_batch(std::span<const terrasim::PrivilegedState> priv);

// Parameters live in one ParamSet: "actor.<i>", "log_std" and "critic.<i>".
struct NetConfig {
  std::size_t hidden = 64;
  double init_log_std = -0.5;
};

numgrad::ParamSet init_actor_critic(const NetConfig& cfg, std::uint64_t seed);

// Tape-free inference.
Matrix actor_mean(const numgrad::ParamSet& params, const ObsBatch& obs);
double actor_log_std(const numgrad::ParamSet& params);
Matrix critic_value(const numgrad::ParamSet& params, const PrivBatch& priv);

// Taped versions for training.
numgrad::Var actor_mean(numgrad::Graph& g, const ObsBatch& obs);
numgrad::Var actor_log_std(numgrad::Graph& g);  // 1 x 1, clamped
numgrad::Var critic_value(numgrad::Graph& g, const PrivBatch& priv);

// log N(a; mean, exp(log_std)^2) for one action dimension.
double gaussian_log_prob(double a, double mean, double log_std);

}  // namespace loopsr::ppo

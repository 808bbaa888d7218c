#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "loopsr/common/rng.hpp"
#include "loopsr/numgrad/adam.hpp"
#include "loopsr/numgrad/graph.hpp"
#include "loopsr/ppo/nets.hpp"

namespace loopsr::ppo {

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// GAE over one sequence. `values` carries one bootstrap entry beyond the
// rewards; dones[t] cuts the recursion after step t. Advantages are raw.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double gamma, double lambda);

// Shifts to zero mean and scales to unit (population) variance in place.
void normalize_advantages(std::span<double> adv);

// min(r A, clip(r, 1 - eps, 1 + eps) A)
double clipped_surrogate(double ratio, double advantage, double clip);

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  double lr = 3e-4;
  double entropy_coef = 0.005;
  double value_coef = 0.5;
  std::size_t epochs = 4;
  std::size_t minibatches = 4;
  double max_grad_norm = 1.0;
};

void validate(const PpoConfig& cfg);

// Flattened transitions ready for an update; advantages already normalized.
struct RolloutBuffer {
  ObsBatch obs;
  PrivBatch priv;
  std::vector<double> actions;     // raw Gaussian samples
  std::vector<double> log_probs;
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return actions.size(); }
  void validate() const;
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

struct LossTerms {
  numgrad::Var total;
  numgrad::Var policy_loss;
  numgrad::Var value_loss;
  numgrad::Var entropy;
  numgrad::Var ratio;
};

// Clipped surrogate + value loss - entropy bonus on the rows `idx` of `buf`.
LossTerms ppo_loss(numgrad::Graph& g, const RolloutBuffer& buf, std::span<const std::size_t> idx,
                   const PpoConfig& cfg);

// Epochs x minibatches of Adam steps on a fresh shuffle per epoch.
PpoStats ppo_update(numgrad::ParamSet& params, numgrad::AdamState& adam, const RolloutBuffer& buf,
                    const PpoConfig& cfg, Rng& rng);

}  // namespace loopsr::ppo

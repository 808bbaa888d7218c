#include "loopsr/ppo/nets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "loopsr/common/rng.hpp"
#include "loopsr/numgrad/layers.hpp"

namespace loopsr::ppo {

namespace {

constexpr std::size_t kLayers = 3;

Matrix scaled(const ObsBatch& obs) {
  Matrix m = obs.rows;
  for (std::size_t c = 0; c < terrasim::kObsDim; ++c) m.col(static_cast<Eigen::Index>(c)) *= kObsScale[c];
  return m;
}

}  // namespace

ObsBatch make_obs_batch(std::span<const terrasim::Observation> obs) {
  ObsBatch b{Matrix(static_cast<Eigen::Index>(obs.size()), static_cast<Eigen::Index>(terrasim::kObsDim))};
  for (std::size_t i = 0; i < obs.size(); ++i) {
    for (std::size_t c = 0; c < terrasim::kObsDim; ++c) b.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = obs[i][c];
  }
  return b;
}

PrivBatch make_priv_batch(std::span<const terrasim::PrivilegedState> priv) {
  PrivBatch b{Matrix(static_cast<Eigen::Index>(priv.size()), static_cast<Eigen::Index>(terrasim::kPrivDim))};
  for (std::size_t i = 0; i < priv.size(); ++i) {
    for (std::size_t c = 0; c < terrasim::kPrivDim; ++c) b.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = priv[i][c];
  }
  return b;
}

numgrad::ParamSet init_actor_critic(const NetConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  numgrad::ParamSet p;
  const std::array<std::size_t, 4> actor{terrasim::kObsDim, cfg.hidden, cfg.hidden, terrasim::kActDim};
  const std::array<std::size_t, 4> critic{terrasim::kPrivDim, cfg.hidden, cfg.hidden, 1};
  numgrad::init_mlp(p, "actor", actor, rng);
  // small output layer: the initial policy is close to u = 0 everywhere
  for (double& w : p.at("actor.2.W").values()) w *= 0.01;
  p.add("log_std", numgrad::Tensor({1}, std::clamp(cfg.init_log_std, kLogStdMin, kLogStdMax)));
  numgrad::init_mlp(p, "critic", critic, rng);
  return p;
}

Matrix actor_mean(const numgrad::ParamSet& params, const ObsBatch& obs) {
  return numgrad::mlp_forward(params, "actor", kLayers, numgrad::Activation::kTanh, scaled(obs));
}

double actor_log_std(const numgrad::ParamSet& params) {
  return std::clamp(params.at("log_std")[0], kLogStdMin, kLogStdMax);
}

Matrix critic_value(const numgrad::ParamSet& params, const PrivBatch& priv) {
  return numgrad::mlp_forward(params, "critic", kLayers, numgrad::Activation::kTanh, priv.rows);
}

numgrad::Var actor_mean(numgrad::Graph& g, const ObsBatch& obs) {
  return numgrad::mlp(g, g.constant(scaled(obs)), "actor", kLayers, numgrad::Activation::kTanh);
}

numgrad::Var actor_log_std(numgrad::Graph& g) {
  return g.clamp(g.param("log_std"), kLogStdMin, kLogStdMax);
}

numgrad::Var critic_value(numgrad::Graph& g, const PrivBatch& priv) {
  return numgrad::mlp(g, g.constant(priv.rows), "critic", kLayers, numgrad::Activation::kTanh);
}

double gaussian_log_prob(double a, double mean, double log_std) {
  const double z = (a - mean) * std::exp(-log_std);
  return -0.5 * z * z - log_std - 0.5 * std::log(2.0 * std::numbers::pi);
}

}  // namespace loopsr::ppo

#include "loopsr/ppo/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "loopsr/common/error.hpp"

namespace loopsr::ppo {

using numgrad::Graph;
using numgrad::Var;

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                      std::span<const std::uint8_t> dones, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n + 1 || dones.size() != n) {
    throw DimensionError("compute_gae: " + std::to_string(n) + " rewards need " +
                         std::to_string(n + 1) + " values and " + std::to_string(n) + " dones");
  }
  if (!(gamma >= 0.0 && gamma <= 1.0) || !(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("compute_gae: gamma and lambda must lie in [0, 1]");
  }
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double keep = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * keep * values[t + 1] - values[t];
    running = delta + gamma * lambda * keep * running;
    out.advantages[t] = running;
    out.returns[t] = running + values[t];
  }
  return out;
}

void normalize_advantages(std::span<double> adv) {
  if (adv.empty()) return;
  const double n = static_cast<double>(adv.size());
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double& a : adv) {
    a -= mean;
    var += a * a;
  }
  var /= n;
  if (var > 0.0) {
    const double inv = 1.0 / std::sqrt(var);
    for (double& a : adv) a *= inv;
  }
}

double clipped_surrogate(double ratio, double advantage, double clip) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage);
}

void validate(const PpoConfig& cfg) {
  if (!(cfg.gamma >= 0.0 && cfg.gamma <= 1.0) || !(cfg.lambda >= 0.0 && cfg.lambda <= 1.0)) {
    throw ConfigError("ppo: gamma and lambda must lie in [0, 1]");
  }
  if (!(cfg.clip > 0.0 && cfg.clip < 1.0)) throw ConfigError("ppo: clip must lie in (0, 1)");
  if (!(cfg.lr > 0.0)) throw ConfigError("ppo: lr must be positive");
  if (cfg.epochs == 0 || cfg.minibatches == 0) throw ConfigError("ppo: epochs and minibatches must be >= 1");
  if (cfg.entropy_coef < 0.0 || cfg.value_coef < 0.0 || cfg.max_grad_norm < 0.0) {
    throw ConfigError("ppo: coefficients must be non-negative");
  }
}

void RolloutBuffer::validate() const {
  const auto n = static_cast<Eigen::Index>(size());
  if (obs.rows.rows() != n || priv.rows.rows() != n || log_probs.size() != size() ||
      advantages.size() != size() || returns.size() != size()) {
    throw DimensionError("rollout buffer arrays differ in length");
  }
  for (double a : advantages) {
    if (!std::isfinite(a)) throw NumericalError("gae", "advantage is not finite");
  }
}

namespace {

Matrix column(std::span<const double> v, std::span<const std::size_t> idx) {
  Matrix m(static_cast<Eigen::Index>(idx.size()), 1);
  for (std::size_t i = 0; i < idx.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[idx[i]];
  return m;
}

Matrix rows_of(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

}  // namespace

LossTerms ppo_loss(Graph& g, const RolloutBuffer& buf, std::span<const std::size_t> idx,
                   const PpoConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  const ObsBatch obs{rows_of(buf.obs.rows, idx)};
  const PrivBatch priv{rows_of(buf.priv.rows, idx)};

  Var mean = actor_mean(g, obs);
  Var log_std = g.broadcast(actor_log_std(g), n, 1);
  Var z = g.mul(g.sub(g.constant(column(buf.actions, idx)), mean), g.exp(g.neg(log_std)));
  Var log_prob = g.add_scalar(g.sub(g.scale(g.square(z), -0.5), log_std),
                              -0.5 * std::log(2.0 * std::numbers::pi));
  Var ratio = g.exp(g.sub(log_prob, g.constant(column(buf.log_probs, idx))));
  Var adv = g.constant(column(buf.advantages, idx));
  Var surrogate = g.minimum(g.mul(ratio, adv),
                            g.mul(g.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip), adv));
  Var policy_loss = g.neg(g.mean(surrogate));

  Var value = critic_value(g, priv);
  Var value_loss = g.mean(g.square(g.sub(value, g.constant(column(buf.returns, idx)))));

  // entropy of N(mean, sigma^2) per action dimension
  Var entropy = g.add_scalar(actor_log_std(g), 0.5 + 0.5 * std::log(2.0 * std::numbers::pi));
  entropy = g.mean(entropy);

  Var total = g.add(g.add(policy_loss, g.scale(value_loss, cfg.value_coef)),
                    g.scale(entropy, -cfg.entropy_coef));
  return {total, policy_loss, value_loss, entropy, ratio};
}

PpoStats ppo_update(numgrad::ParamSet& params, numgrad::AdamState& adam, const RolloutBuffer& buf,
                    const PpoConfig& cfg, Rng& rng) {
  validate(cfg);
  buf.validate();
  const std::size_t n = buf.size();
  if (n < cfg.minibatches) throw ConfigError("ppo: fewer transitions than minibatches");
  std::vector<std::size_t> order(n);
  PpoStats stats;
  std::size_t batches = 0;
  std::size_t clipped = 0;
  std::size_t ratios = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < cfg.minibatches; ++b) {
      const std::size_t lo = b * n / cfg.minibatches;
      const std::size_t hi = (b + 1) * n / cfg.minibatches;
      std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      Graph g(params);
      const LossTerms terms = ppo_loss(g, buf, idx, cfg);
      stats.policy_loss += g.scalar(terms.policy_loss);
      stats.value_loss += g.scalar(terms.value_loss);
      stats.entropy += g.scalar(terms.entropy);
      const Matrix& r = g.value(terms.ratio);
      for (Eigen::Index i = 0; i < r.rows(); ++i) {
        const double ratio = r(i, 0);
        if (std::abs(ratio - 1.0) > cfg.clip) ++clipped;
        stats.approx_kl += (ratio - 1.0) - std::log(ratio);
        ++ratios;
      }
      g.backward(terms.total);
      numgrad::adam_update(params, g.gradients(), adam);
      ++batches;
    }
  }
  stats.policy_loss /= static_cast<double>(batches);
  stats.value_loss /= static_cast<double>(batches);
  stats.entropy /= static_cast<double>(batches);
  stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(ratios);
  stats.approx_kl /= static_cast<double>(ratios);
  return stats;
}

}  // namespace loopsr::ppo

#include <cmath>
#include <set>
#include <type_traits>
#include <vector>

#include <gtest/gtest.h>

#include "loopsr/common/error.hpp"
#include "loopsr/numgrad/grad_check.hpp"
#include "loopsr/ppo/ppo.hpp"
#include "loopsr/ppo/trainer.hpp"

namespace loopsr::ppo {
namespace {

using numgrad::ParamSet;

template <typename B>
constexpr bool actor_accepts = requires(const ParamSet& p, const B& b) { actor_mean(p, b); };
template <typename B>
constexpr bool critic_accepts = requires(const ParamSet& p, const B& b) { critic_value(p, b); };

static_assert(actor_accepts<ObsBatch> && !actor_accepts<PrivBatch>);
static_assert(critic_accepts<PrivBatch> && !critic_accepts<ObsBatch>);

TEST(Gae, ZeroDiscountGivesOneStepAdvantage) {
  std::vector<double> r{1.0, -0.5, 2.0};
  std::vector<double> v{0.3, 0.1, -0.4, 9.0};
  std::vector<std::uint8_t> d{0, 0, 0};
  const auto out = compute_gae(r, v, d, 0.0, 0.95);
  for (std::size_t t = 0; t < r.size(); ++t) EXPECT_DOUBLE_EQ(out.advantages[t], r[t] - v[t]);
}

TEST(Gae, HandEvaluatedRecursion) {
  std::vector<double> r{1.0, 1.0};
  std::vector<double> v{0.0, 0.0, 0.0};
  std::vector<std::uint8_t> d{0, 0};
  const auto out = compute_gae(r, v, d, 1.0, 1.0);
  EXPECT_EQ(out.advantages, (std::vector<double>{2.0, 1.0}));
  EXPECT_EQ(out.returns, (std::vector<double>{2.0, 1.0}));
}

TEST(Gae, ConsistentValuesGiveZeroAdvantage) {
  const double gamma = 0.9;
  std::vector<double> r{0.5, -1.0, 0.25, 2.0};
  std::vector<double> v(r.size() + 1, 0.0);
  v.back() = 1.5;
  for (std::size_t t = r.size(); t-- > 0;) v[t] = r[t] + gamma * v[t + 1];
  std::vector<std::uint8_t> d(r.size(), 0);
  for (double a : compute_gae(r, v, d, gamma, 0.95).advantages) EXPECT_NEAR(a, 0.0, 1e-12);
}

TEST(Gae, DoneCutsBootstrap) {
  std::vector<double> r{1.0, 1.0};
  std::vector<double> v{0.0, 5.0, 7.0};
  std::vector<std::uint8_t> d{1, 0};
  const auto out = compute_gae(r, v, d, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(out.advantages[0], 1.0);
  EXPECT_DOUBLE_EQ(out.advantages[1], 1.0 + 7.0 - 5.0);
}

TEST(Gae, Errors) {
  std::vector<double> r{1.0, 1.0};
  std::vector<double> v{0.0, 0.0};
  std::vector<std::uint8_t> d{0, 0};
  EXPECT_THROW(compute_gae(r, v, d, 0.9, 0.9), DimensionError);
  std::vector<double> v3{0.0, 0.0, 0.0};
  EXPECT_THROW(compute_gae(r, v3, d, 1.5, 0.9), ConfigError);
}

TEST(Gae, NormalizationMomentsHold) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> adv(257);
    for (double& a : adv) a = 40.0 * normal(rng) + 13.0;
    normalize_advantages(adv);
    double mean = 0.0, var = 0.0;
    for (double a : adv) mean += a;
    mean /= adv.size();
    for (double a : adv) var += (a - mean) * (a - mean);
    var /= adv.size();
    EXPECT_LT(std::abs(mean), 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(Surrogate, ClippingRule) {
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.5, 1.0, 0.2), 1.2);
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.5, -1.0, 0.2), -1.5);
  EXPECT_DOUBLE_EQ(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.1, 2.0, 0.2), 2.2);
}

RolloutBuffer toy_buffer(const ParamSet& params, std::size_t n, std::uint64_t seed,
                         const std::vector<double>& log_prob_shift) {
  Rng rng(seed);
  std::vector<terrasim::Observation> obs(n);
  std::vector<terrasim::PrivilegedState> priv(n);
  for (auto& o : obs) {
    for (double& x : o) x = normal(rng);
  }
  for (auto& p : priv) {
    for (double& x : p) x = normal(rng);
  }
  RolloutBuffer buf;
  buf.obs = make_obs_batch(obs);
  buf.priv = make_priv_batch(priv);
  const Matrix mean = actor_mean(params, buf.obs);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = mean(static_cast<Eigen::Index>(i), 0) + 0.5 * normal(rng);
    buf.actions.push_back(a);
    buf.log_probs.push_back(gaussian_log_prob(a, mean(static_cast<Eigen::Index>(i), 0), actor_log_std(params)) +
                            (i < log_prob_shift.size() ? log_prob_shift[i] : 0.0));
    buf.advantages.push_back(normal(rng));
    buf.returns.push_back(normal(rng));
  }
  return buf;
}

TEST(PpoUpdate, FirstEpochRatiosAreOne) {
  const ParamSet params = init_actor_critic({}, 4);
  const RolloutBuffer buf = toy_buffer(params, 64, 5, {});
  numgrad::Graph g(params);
  std::vector<std::size_t> idx(64);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto terms = ppo_loss(g, buf, idx, PpoConfig{});
  const Matrix& r = g.value(terms.ratio);
  for (Eigen::Index i = 0; i < r.rows(); ++i) EXPECT_NEAR(r(i, 0), 1.0, 1e-12);

  ParamSet p = params;
  numgrad::AdamState adam(p, {});
  PpoConfig cfg;
  cfg.epochs = 1;
  cfg.minibatches = 1;
  Rng rng(0);
  EXPECT_EQ(ppo_update(p, adam, buf, cfg, rng).clip_fraction, 0.0);
}

TEST(PpoUpdate, SurrogateGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ParamSet params = init_actor_critic({8, -0.3}, seed);
    // ratios of e^0.05 and e^-0.1 sit inside the clip band; e^0.4 lies outside
    const RolloutBuffer buf = toy_buffer(params, 2, seed + 100, {-0.05, 0.1});
    const RolloutBuffer clipped = toy_buffer(params, 2, seed + 200, {-0.4, 0.0});
    for (const RolloutBuffer* b : {&buf, &clipped}) {
      std::vector<std::size_t> idx{0, 1};
      auto build = [&](numgrad::Graph& g) { return ppo_loss(g, *b, idx, PpoConfig{}).total; };
      auto res = numgrad::grad_check(build, params, {1e-3, numgrad::DifferenceScheme::kRichardson});
      EXPECT_LT(res.max_rel_error, 1e-4) << "seed " << seed << " " << res.worst_param << "["
                                         << res.worst_index << "] " << res.analytic << " vs " << res.numeric;
    }
  }
}

TEST(PpoUpdate, NonFiniteLossAborts) {
  ParamSet params = init_actor_critic({}, 1);
  RolloutBuffer buf = toy_buffer(params, 8, 2, {});
  buf.returns[3] = std::numeric_limits<double>::infinity();
  numgrad::AdamState adam(params, {});
  Rng rng(0);
  EXPECT_THROW(ppo_update(params, adam, buf, PpoConfig{}, rng), NumericalError);
}

TEST(PpoUpdate, ConfigValidation) {
  PpoConfig cfg;
  cfg.clip = 0.0;
  EXPECT_THROW(validate(cfg), ConfigError);
  cfg = PpoConfig{};
  cfg.epochs = 0;
  EXPECT_THROW(validate(cfg), ConfigError);
}

TEST(Trainer, StepAccounting) {
  TrainerConfig cfg;
  Trainer trainer(init_actor_critic({}, 1), cfg, TrainingDomain{}, 7);
  trainer.iterate();
  const auto stats = trainer.iterate();
  EXPECT_EQ(stats.env_steps, 3072u);
  EXPECT_EQ(trainer.iteration(), 2u);
}

TEST(Trainer, DivergenceKeepsLastGoodParameters) {
  ParamSet params = init_actor_critic({}, 1);
  params.at("actor.0.W")[0] = std::nan("");
  Trainer trainer(params, TrainerConfig{}, TrainingDomain{}, 7);
  try {
    trainer.iterate();
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.iteration(), 1u);
    EXPECT_TRUE(std::isnan(e.last_good().at("actor.0.W")[0]));
  }
}

TEST(Pretrain, EncoderStartsAfterThreshold) {
  PretrainConfig cfg;
  cfg.iterations = 2;
  cfg.encoder_start = 1;
  cfg.trajectories_per_checkpoint = 2;
  std::vector<std::size_t> calls;
  auto res = pretrain(cfg, 3, [&](std::size_t i, auto) { calls.push_back(i); });
  EXPECT_EQ(calls, (std::vector<std::size_t>{2}));
  EXPECT_EQ(res.history.size(), 2u);
  EXPECT_EQ(res.history.back().env_steps, 3072u);
  EXPECT_EQ(res.dataset.size(), 20u);
}

TEST(Pretrain, CheckpointSchedule) {
  EXPECT_EQ(checkpoint_iterations(2000, 10),
            (std::vector<std::size_t>{200, 400, 600, 800, 1000, 1200, 1400, 1600, 1800, 2000}));
  EXPECT_EQ(checkpoint_iterations(2, 4), (std::vector<std::size_t>{1, 1, 2, 2}));
}

TEST(Pretrain, DatasetCarriesCheckpointProvenance) {
  PretrainConfig cfg;
  cfg.iterations = 10;
  cfg.encoder_start = 10;
  cfg.trajectories_per_checkpoint = 3;
  const auto res = pretrain(cfg, 4);
  std::set<std::uint32_t> ids;
  for (const auto& r : res.dataset) {
    ASSERT_TRUE(r.label.has_value());
    EXPECT_EQ(r.n, terrasim::kEpisodeSteps);
    ids.insert(r.label->checkpoint_id);
  }
  EXPECT_GE(ids.size(), 3u);
  EXPECT_EQ(res.dataset.size(), 30u);
}

TEST(Pretrain, Deterministic) {
  PretrainConfig cfg;
  cfg.iterations = 3;
  cfg.trajectories_per_checkpoint = 2;
  const auto a = pretrain(cfg, 9);
  const auto b = pretrain(cfg, 9);
  EXPECT_EQ(a.policy, b.policy);
  EXPECT_EQ(a.dataset, b.dataset);
  EXPECT_EQ(a.history.back().mean_reward, b.history.back().mean_reward);
}

TEST(Evaluate, DeterministicAndRejectsZeroEpisodes) {
  const ParamSet params = init_actor_critic({}, 2);
  terrasim::EnvParams env;
  const auto a = evaluate(params, env, 4, 11);
  const auto b = evaluate(params, env, 4, 11);
  EXPECT_EQ(a.mean_reward, b.mean_reward);
  EXPECT_EQ(a.distance, b.distance);
  EXPECT_EQ(a.episodes, 4u);
  EXPECT_THROW(evaluate(params, env, 0, 11), ConfigError);
}

TEST(Checkpoint, RoundTripGivesIdenticalEvaluation) {
  const ParamSet params = init_actor_critic({}, 6);
  const auto path = std::filesystem::temp_directory_path() / "loopsr_policy_test.lsrw";
  save_policy(path, {params, 42, 0xdeadbeefcafef00dULL});
  const PolicyCheckpoint back = load_policy(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.params, params);
  EXPECT_EQ(back.iteration, 42u);
  EXPECT_EQ(back.config_hash, 0xdeadbeefcafef00dULL);
  terrasim::EnvParams env;
  const auto a = evaluate(params, env, 3, 1);
  const auto b = evaluate(back.params, env, 3, 1);
  EXPECT_EQ(a.mean_reward, b.mean_reward);
  EXPECT_EQ(a.mean_velocity, b.mean_velocity);
}

TEST(Pretrain, FlatOnlyRunReachesHighReward) {
  PretrainConfig cfg;
  cfg.iterations = 2000;
  cfg.dataset_checkpoints = 0;
  cfg.domain.terrain = terrasim::one_hot(terrasim::Terrain::kFlat);
  const auto res = pretrain(cfg, 1);
  double tail = 0.0;
  for (std::size_t i = res.history.size() - 50; i < res.history.size(); ++i) tail += res.history[i].mean_reward;
  EXPECT_GE(tail / 50.0, 0.8);
  terrasim::EnvParams flat;
  flat.terrain = terrasim::one_hot(terrasim::Terrain::kFlat);
  flat.dr_range = terrasim::robot_full_range();
  EXPECT_GE(evaluate(res.policy, flat, 20, 3).mean_reward, 0.8);
}

}  // namespace
}  // namespace loopsr::ppo

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "loopsr/common/error.hpp"
#include "loopsr/common/rng.hpp"
#include "loopsr/mdpgap/mdp.hpp"
#include "loopsr/mdpgap/sweep.hpp"

namespace loopsr::mdpgap {
namespace {

TabularMdp single_state(double r, double gamma) {
  TabularMdp m;
  m.states = 1;
  m.actions = 1;
  m.P = {1.0};
  m.r = {r};
  m.gamma = gamma;
  m.mu0 = {1.0};
  return m;
}

TEST(ValueIteration, GeometricSeries) {
  const auto res = value_iteration(single_state(1.0, 0.9), 1e-12);
  EXPECT_NEAR(res.q(0, 0), 10.0, 1e-11);
}

TEST(ValueIteration, ZeroRewardGivesZero) {
  auto p = random_pair(0, 3, 6, 3, 0.5, 0.99).m;
  std::fill(p.r.begin(), p.r.end(), 0.0);
  EXPECT_EQ(value_iteration(p, 1e-12).q.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ValueIteration, MatchesPolicyEnumerationOnTwoStateMdps) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    TabularMdp m = random_pair(seed, 11, 1, 1, 0.5, 0.99).m;
    std::size_t id = seed;
    while (m.states != 2 || m.actions != 2) m = random_pair(id += 100, 11, 2, 2, 0.5, 0.99).m;
    const auto vi = value_iteration(m, 1e-12);
    const MatrixXd oracle = policy_enumeration_q(m);
    EXPECT_LT((vi.q - oracle).cwiseAbs().maxCoeff(), 1e-8) << "seed " << seed;
  }
}

TEST(ValueIteration, ResidualStrictlyDecreasesUntilTolerance) {
  for (std::size_t id = 0; id < 20; ++id) {
    const auto m = random_pair(id, 5, 10, 5, 0.5, 0.99).m;
    const auto res = value_iteration(m, 1e-12);
    for (std::size_t k = 1; k < res.residuals.size(); ++k) {
      ASSERT_LT(res.residuals[k], res.residuals[k - 1]) << "pair " << id << " sweep " << k;
    }
    EXPECT_LT(res.residuals.back(), res.threshold);
    EXPECT_LT(res.error_bound, 1e-8);
  }
}

TEST(ValueIteration, RejectsBadDiscountAndTolerance) {
  EXPECT_THROW(value_iteration(single_state(1.0, 1.0), 1e-6), ConfigError);
  EXPECT_THROW(value_iteration(single_state(1.0, 0.5), 0.0), ConfigError);
  auto m = single_state(1.0, 0.5);
  m.P = {0.9};
  EXPECT_THROW(m.validate(), ConfigError);
}

TEST(Tv, Examples) {
  const std::vector<double> p{0.3, 0.7};
  EXPECT_EQ(tv(p, p), 0.0);
  EXPECT_EQ(tv(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(tv(std::vector<double>{0.5, 0.5}, std::vector<double>{0.75, 0.25}), 0.25);
  EXPECT_THROW(tv(p, std::vector<double>{1.0}), DimensionError);
}

TEST(Occupancy, SingleStateAndZeroDiscount) {
  const auto m = single_state(0.3, 0.8);
  const VectorXd rho = occupancy(m, MatrixXd::Ones(1, 1), m.mu0);
  EXPECT_NEAR(rho[0], 1.0, 1e-15);
  auto z = random_pair(4, 9, 6, 3, 0.5, 0.6).m;
  z.gamma = 0.0;
  const MatrixXd pi = policy_matrix(std::vector<std::size_t>(z.states, 0), z.actions);
  const VectorXd r0 = occupancy(z, pi, z.mu0);
  for (std::size_t s = 0; s < z.states; ++s) EXPECT_NEAR(r0[s], z.mu0[s], 1e-15);
}

TEST(Occupancy, SumsToOne) {
  for (std::size_t id = 0; id < 30; ++id) {
    const auto m = random_pair(id, 21, 10, 5, 0.5, 0.99).m;
    const auto pi = policy_matrix(greedy_policy(value_iteration(m, 1e-10).q), m.actions);
    EXPECT_NEAR(occupancy(m, pi, m.mu0).sum(), 1.0, 1e-10);
  }
}

TEST(Occupancy, MatchesMonteCarloOnThreeStateChain) {
  TabularMdp m;
  m.states = 3;
  m.actions = 1;
  m.gamma = 0.8;
  m.P = {0.1, 0.9, 0.0,  //
         0.0, 0.2, 0.8,  //
         0.5, 0.0, 0.5};
  m.r = {0, 0, 0};
  m.mu0 = {0.7, 0.2, 0.1};
  const VectorXd rho = occupancy(m, MatrixXd::Ones(3, 1), m.mu0);
  // sample t ~ (1 - gamma) gamma^t, then s_t along the chain
  Rng rng(17);
  const int n = 1000000;
  std::array<double, 3> count{};
  std::discrete_distribution<int> start(m.mu0.begin(), m.mu0.end());
  std::array<std::discrete_distribution<int>, 3> step{
      std::discrete_distribution<int>{0.1, 0.9, 0.0}, std::discrete_distribution<int>{0.0, 0.2, 0.8},
      std::discrete_distribution<int>{0.5, 0.0, 0.5}};
  std::geometric_distribution<int> horizon(1.0 - m.gamma);
  for (int i = 0; i < n; ++i) {
    int s = start(rng);
    for (int t = horizon(rng); t > 0; --t) s = step[s](rng);
    count[s] += 1.0;
  }
  for (int s = 0; s < 3; ++s) {
    const double p = count[s] / n;
    const double sigma = std::sqrt(rho[s] * (1.0 - rho[s]) / n);
    EXPECT_LT(std::abs(p - rho[s]), 3.0 * sigma) << "state " << s;
  }
}

TEST(Greedy, TiesGoToLowestIndex) {
  MatrixXd q(2, 3);
  q << 1.0, 1.0 + 1e-12, 0.5,  //
      0.0, 2.0, 2.0;
  EXPECT_EQ(greedy_policy(q), (std::vector<std::size_t>{0, 1}));
}

TEST(Decompose, IdenticalPairIsAllZero) {
  const auto m = random_pair(1, 31, 8, 4, 0.5, 0.99).m;
  const auto rep = decompose(m, m);
  EXPECT_EQ(rep.lhs, 0.0);
  EXPECT_EQ(rep.max_residual, 0.0);
  EXPECT_EQ(rep.eps_pi, 0.0);
  EXPECT_EQ(rep.eps_rho, 0.0);
  EXPECT_EQ(rep.term_i.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(rep.term_ii.cwiseAbs().maxCoeff(), 0.0);
  const auto b = bound_rhs(m, m);
  EXPECT_EQ(b.rhs, 0.0);
  EXPECT_EQ(b.lhs, 0.0);
}

TEST(Decompose, ConstantRewardShift) {
  const double delta = 0.37;
  for (std::size_t id = 0; id < 10; ++id) {
    const auto m = random_pair(id, 41, 9, 5, 0.5, 0.99).m;
    auto shifted = m;
    for (double& v : shifted.r) v -= delta;
    const auto rep = decompose(m, shifted);
    const double expect = delta / (1.0 - m.gamma);
    EXPECT_NEAR((rep.q - rep.q_r).maxCoeff(), expect, 1e-9);
    EXPECT_NEAR((rep.q - rep.q_r).minCoeff(), expect, 1e-9);
    EXPECT_EQ(rep.eps_pi, 0.0);
    EXPECT_EQ(rep.eps_rho, 0.0);
    EXPECT_LT(rep.max_residual, 1e-9);
    const auto b = bound_rhs(m, shifted, rep);
    EXPECT_NEAR(b.reward_term, expect, 1e-12);
    EXPECT_GE(b.rhs + 1e-9, b.lhs);
  }
}

TEST(Decompose, IdentityHoldsOnRandomPairs) {
  double worst = 0.0;
  for (std::size_t id = 0; id < 100; ++id) {
    const auto p = random_pair(id, 51, 10, 5, 0.5, 0.99);
    const auto rep = decompose(p.m, p.m_r);
    worst = std::max(worst, rep.max_residual);
    EXPECT_GE(rep.eps_pi, 0.0);
    EXPECT_LE(rep.eps_pi, 1.0);
    EXPECT_GE(rep.eps_rho, 0.0);
    EXPECT_LE(rep.eps_rho, rep.eps_pi + 1e-12);
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Decompose, MismatchedSpacesRejected) {
  const auto a = random_pair(0, 61, 10, 5, 0.5, 0.9);
  auto b = single_state(0.0, a.m.gamma);
  if (a.m.states == 1 && a.m.actions == 1) b.states = 1;
  else EXPECT_THROW(decompose(a.m, b), DimensionError);
}

TEST(Json, RoundTripIsExact) {
  const auto p = random_pair(7, 71, 10, 5, 0.5, 0.99);
  const auto back = pair_from_json(nlohmann::json::parse(to_json(p).dump()));
  EXPECT_EQ(back.m, p.m);
  EXPECT_EQ(back.m_r, p.m_r);
  auto j = to_json(p.m);
  j["bogus"] = 1;
  EXPECT_THROW(mdp_from_json(j), ConfigError);
}

TEST(Sweep, HundredPairsNoIdentityFailures) {
  SweepConfig cfg;
  cfg.seed = 3;
  const auto res = run_sweep(cfg);
  EXPECT_EQ(res.rows.size(), 100u);
  EXPECT_TRUE(res.identity_failures.empty());
  EXPECT_LT(res.max_residual, 1e-9);
  EXPECT_GE(res.fraction_bound_holds, 0.0);
  EXPECT_LE(res.fraction_bound_holds, 1.0);
}

TEST(Sweep, InjectedFaultIsDumpedAndReproduces) {
  SweepConfig cfg;
  cfg.pairs = 12;
  cfg.seed = 9;
  cfg.fault_pair = 5;
  cfg.fault = {0, 0, 0, 0.05};
  const auto res = run_sweep(cfg);
  ASSERT_EQ(res.identity_failures, (std::vector<std::size_t>{5}));
  const auto dump = failure_dump(cfg, res);
  const auto again = sweep_config_from_json(nlohmann::json::parse(dump.dump()));
  ASSERT_EQ(again.explicit_pairs.size(), 1u);
  const auto res2 = run_sweep(again);
  ASSERT_EQ(res2.identity_failures, (std::vector<std::size_t>{5}));
  EXPECT_EQ(res2.rows[0].max_residual, res.rows[5].max_residual);
}

TEST(Sweep, ConfigRejectsUnknownKeys) {
  EXPECT_THROW(sweep_config_from_json({{"pairz", 3}}), ConfigError);
  EXPECT_THROW(sweep_config_from_json({{"gamma_max", 1.0}}), ConfigError);
  EXPECT_NO_THROW(sweep_config_from_json({{"pairs", 3}}));
}

}  // namespace
}  // namespace loopsr::mdpgap

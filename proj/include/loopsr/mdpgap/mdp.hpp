#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace loopsr::mdpgap {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Fully observed finite MDP. P is flattened [s][a][s'], r is [s][a].
struct TabularMdp {
  std::size_t states = 0;
  std::size_t actions = 0;
  std::vector<double> P;
  std::vector<double> r;
  double gamma = 0.9;
  std::vector<double> mu0;

  double p(std::size_t s, std::size_t a, std::size_t s2) const { return P[(s * actions + a) * states + s2]; }
  double reward(std::size_t s, std::size_t a) const { return r[s * actions + a]; }
  double r_max() const;
  // Rows of P and mu0 stochastic within 1e-12, rewards finite, gamma in [0, 1).
  void validate() const;

  bool operator==(const TabularMdp&) const = default;
};

struct ValueIterationResult {
  MatrixXd q;                      // S x A
  std::vector<double> residuals;   // sup-norm Bellman residual after each sweep
  double threshold = 0.0;          // residual target actually used
  double error_bound = 0.0;        // sup |q - Q*| <= gamma / (1 - gamma) * last residual
};

// Sweeps until the Bellman residual drops below tol * (1 - gamma) / gamma.
// Targets below the floating-point floor are raised to it: once a sweep's
// contraction (1 - gamma) * residual falls to a few ulp of |Q| the residual
// stops decreasing, so the floor is 8 eps r_max / (1 - gamma)^2.
ValueIterationResult value_iteration(const TabularMdp& m, double tol);

VectorXd state_values(const MatrixXd& q);
// Deterministic greedy policy; actions within 1e-9 of the max tie, lowest index wins.
std::vector<std::size_t> greedy_policy(const MatrixXd& q, double tie_tol = 1e-9);
// S x A stochastic matrix of a deterministic policy.
MatrixXd policy_matrix(const std::vector<std::size_t>& actions, std::size_t num_actions);

// V^pi by linear solve of (I - gamma P_pi) V = r_pi.
VectorXd evaluate_policy(const TabularMdp& m, const MatrixXd& pi);
// Q* by enumerating every deterministic policy and taking the best V; A^S solves.
MatrixXd policy_enumeration_q(const TabularMdp& m);

// 0.5 * sum |p - q|
double tv(std::span<const double> p, std::span<const double> q);

// Normalized discounted state occupancy (1 - gamma) sum_t gamma^t Pr(s_t = s).
VectorXd occupancy(const TabularMdp& m, const MatrixXd& pi, std::span<const double> mu0);

// Corruption of one transition entry of M_R seen only by the identity check;
// used to exercise the failure path of the sweep.
struct TransitionFault {
  std::size_t state = 0;
  std::size_t action = 0;
  std::size_t next_state = 0;
  double delta = 0.0;
};

struct DiscrepancyReport {
  MatrixXd q, q_r;     // Q*, Q*_R
  VectorXd v, v_r;     // V*, V*_R
  MatrixXd delta_r;    // r - r_R
  MatrixXd term_i;     // gamma * sum_s' P (V* - V*_R)
  MatrixXd term_ii;    // gamma * sum_s' (P - P_R) V*_R
  MatrixXd residual;   // (Q* - Q*_R) - (delta_r + term_i + term_ii)
  double max_residual = 0.0;
  double eps_pi = 0.0;
  double eps_rho = 0.0;
  double lhs = 0.0;    // sup |Q* - Q*_R|
};

DiscrepancyReport decompose(const TabularMdp& m, const TabularMdp& m_r, double tol = 1e-12,
                            const std::optional<TransitionFault>& fault = std::nullopt);

struct BoundReport {
  double lhs = 0.0;
  double reward_term = 0.0;     // sup|dr| / (1 - gamma)
  double policy_term = 0.0;     // 2 gamma r_max / (1 - gamma)^2 * eps_pi
  double occupancy_term = 0.0;  // gamma / (1 - gamma) * max_s V*_R(s) * eps_rho
  double rhs = 0.0;
  bool holds() const { return lhs <= rhs; }
};

BoundReport bound_rhs(const TabularMdp& m, const TabularMdp& m_r, const DiscrepancyReport& report);
BoundReport bound_rhs(const TabularMdp& m, const TabularMdp& m_r);

struct MdpPair {
  std::size_t id = 0;
  TabularMdp m;
  TabularMdp m_r;
};

// Random pair sharing S, A and gamma: M_R mixes M's transitions with fresh
// ones and perturbs the rewards.
MdpPair random_pair(std::size_t id, std::uint64_t seed, std::size_t max_states, std::size_t max_actions,
                    double gamma_min, double gamma_max);

nlohmann::json to_json(const TabularMdp& m);
TabularMdp mdp_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MdpPair& p);
MdpPair pair_from_json(const nlohmann::json& j);

}  // namespace loopsr::mdpgap

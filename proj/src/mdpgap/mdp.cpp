#include "loopsr/mdpgap/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "loopsr/common/error.hpp"
#include "loopsr/common/rng.hpp"

namespace loopsr::mdpgap {

namespace {

void require_same_spaces(const TabularMdp& a, const TabularMdp& b) {
  if (a.states != b.states || a.actions != b.actions) {
    throw DimensionError("MDP pair has mismatched state or action spaces");
  }
  if (a.gamma != b.gamma) throw DimensionError("MDP pair has different discounts");
}

// r(s,a) + gamma sum_s' P(s'|s,a) v(s')
MatrixXd backup(const TabularMdp& m, const VectorXd& v) {
  MatrixXd q(m.states, m.actions);
  for (std::size_t s = 0; s < m.states; ++s) {
    for (std::size_t a = 0; a < m.actions; ++a) {
      double e = 0.0;
      for (std::size_t s2 = 0; s2 < m.states; ++s2) e += m.p(s, a, s2) * v[s2];
      q(s, a) = m.reward(s, a) + m.gamma * e;
    }
  }
  return q;
}

std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  double sum = 0.0;
  for (double& x : v) {
    x = -std::log(1.0 - uniform(rng, 0.0, 1.0));
    sum += x;
  }
  for (double& x : v) x /= sum;
  return v;
}

std::vector<double> json_doubles(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("MDP JSON missing '") + key + "'");
  return j.at(key).get<std::vector<double>>();
}

}  // namespace

double TabularMdp::r_max() const {
  double m = 0.0;
  for (double v : r) m = std::max(m, std::abs(v));
  return m;
}

void TabularMdp::validate() const {
  if (states == 0 || actions == 0) throw ConfigError("MDP needs at least one state and action");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("MDP discount must lie in [0, 1)");
  if (P.size() != states * actions * states || r.size() != states * actions || mu0.size() != states) {
    throw DimensionError("MDP arrays do not match |S|=" + std::to_string(states) + ", |A|=" + std::to_string(actions));
  }
  for (double v : r) {
    if (!std::isfinite(v)) throw ConfigError("MDP reward is not finite");
  }
  auto check_row = [](std::span<const double> row, const std::string& what) {
    double sum = 0.0;
    for (double v : row) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(what + " has a negative or non-finite entry");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ConfigError(what + " sums to " + std::to_string(sum));
  };
  for (std::size_t s = 0; s < states; ++s) {
    for (std::size_t a = 0; a < actions; ++a) {
      check_row(std::span(P).subspan((s * actions + a) * states, states),
                "P[" + std::to_string(s) + "][" + std::to_string(a) + "]");
    }
  }
  check_row(mu0, "mu0");
}

ValueIterationResult value_iteration(const TabularMdp& m, double tol) {
  m.validate();
  if (!(tol > 0.0)) throw ConfigError("value_iteration tolerance must be positive");
  ValueIterationResult out;
  out.q = MatrixXd::Zero(m.states, m.actions);
  if (m.gamma == 0.0) {
    out.q = backup(m, VectorXd::Zero(m.states));
    out.residuals.push_back(0.0);
    return out;
  }
  const double target = tol * (1.0 - m.gamma) / m.gamma;
  const double q_scale = std::max(1.0, m.r_max() / (1.0 - m.gamma));
  out.threshold = std::max(target, 8.0 * std::numeric_limits<double>::epsilon() * q_scale / (1.0 - m.gamma));
  for (;;) {
    MatrixXd next = backup(m, state_values(out.q));
    const double res = (next - out.q).cwiseAbs().maxCoeff();
    out.q = std::move(next);
    out.residuals.push_back(res);
    if (res < out.threshold) break;
    if (out.residuals.size() > 1 && res >= out.residuals[out.residuals.size() - 2]) {
      throw NumericalError("value_iteration", fmt::format("Bellman residual stalled at {:.3e} above {:.3e}", res, out.threshold));
    }
  }
  // residual of the returned iterate
  const double last = (backup(m, state_values(out.q)) - out.q).cwiseAbs().maxCoeff();
  out.error_bound = last / (1.0 - m.gamma);
  return out;
}

VectorXd state_values(const MatrixXd& q) { return q.rowwise().maxCoeff(); }

std::vector<std::size_t> greedy_policy(const MatrixXd& q, double tie_tol) {
  std::vector<std::size_t> pi(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index s = 0; s < q.rows(); ++s) {
    const double best = q.row(s).maxCoeff();
    for (Eigen::Index a = 0; a < q.cols(); ++a) {
      if (q(s, a) >= best - tie_tol) {
        pi[static_cast<std::size_t>(s)] = static_cast<std::size_t>(a);
        break;
      }
    }
  }
  return pi;
}

MatrixXd policy_matrix(const std::vector<std::size_t>& actions, std::size_t num_actions) {
  MatrixXd pi = MatrixXd::Zero(static_cast<Eigen::Index>(actions.size()), static_cast<Eigen::Index>(num_actions));
  for (std::size_t s = 0; s < actions.size(); ++s) {
    if (actions[s] >= num_actions) throw DimensionError("policy action out of range");
    pi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(actions[s])) = 1.0;
  }
  return pi;
}

namespace {

MatrixXd transition_under(const TabularMdp& m, const MatrixXd& pi) {
  if (pi.rows() != static_cast<Eigen::Index>(m.states) || pi.cols() != static_cast<Eigen::Index>(m.actions)) {
    throw DimensionError("policy shape does not match the MDP");
  }
  for (Eigen::Index s = 0; s < pi.rows(); ++s) {
    if ((pi.row(s).array() < 0.0).any() || std::abs(pi.row(s).sum() - 1.0) > 1e-12) {
      throw ConfigError("policy row " + std::to_string(s) + " is not a distribution");
    }
  }
  MatrixXd t = MatrixXd::Zero(m.states, m.states);
  for (std::size_t s = 0; s < m.states; ++s) {
    for (std::size_t a = 0; a < m.actions; ++a) {
      const double w = pi(s, a);
      if (w == 0.0) continue;
      for (std::size_t s2 = 0; s2 < m.states; ++s2) t(s, s2) += w * m.p(s, a, s2);
    }
  }
  return t;
}

VectorXd solve_checked(const MatrixXd& a, const VectorXd& b, const char* op) {
  Eigen::FullPivLU<MatrixXd> lu(a);
  if (!lu.isInvertible()) throw NumericalError(op, "singular linear system");
  VectorXd x = lu.solve(b);
  if (!x.allFinite()) throw NumericalError(op, "non-finite solution");
  return x;
}

}  // namespace

VectorXd evaluate_policy(const TabularMdp& m, const MatrixXd& pi) {
  m.validate();
  const MatrixXd t = transition_under(m, pi);
  VectorXd r_pi(m.states);
  for (std::size_t s = 0; s < m.states; ++s) {
    double v = 0.0;
    for (std::size_t a = 0; a < m.actions; ++a) v += pi(s, a) * m.reward(s, a);
    r_pi[s] = v;
  }
  const MatrixXd sys = MatrixXd::Identity(m.states, m.states) - m.gamma * t;
  return solve_checked(sys, r_pi, "evaluate_policy");
}

MatrixXd policy_enumeration_q(const TabularMdp& m) {
  m.validate();
  const double count = std::pow(static_cast<double>(m.actions), static_cast<double>(m.states));
  if (count > 1e6) throw ConfigError("policy enumeration limited to 1e6 policies");
  std::vector<std::size_t> choice(m.states, 0);
  VectorXd best = VectorXd::Constant(m.states, -std::numeric_limits<double>::infinity());
  for (;;) {
    best = best.cwiseMax(evaluate_policy(m, policy_matrix(choice, m.actions)));
    std::size_t k = 0;
    while (k < m.states && ++choice[k] == m.actions) choice[k++] = 0;
    if (k == m.states) break;
  }
  return backup(m, best);
}

double tv(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("tv: distributions of different lengths");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

VectorXd occupancy(const TabularMdp& m, const MatrixXd& pi, std::span<const double> mu0) {
  m.validate();
  if (mu0.size() != m.states) throw DimensionError("occupancy: mu0 length does not match |S|");
  const MatrixXd t = transition_under(m, pi);
  VectorXd b(m.states);
  for (std::size_t s = 0; s < m.states; ++s) b[s] = (1.0 - m.gamma) * mu0[s];
  const MatrixXd sys = MatrixXd::Identity(m.states, m.states) - m.gamma * t.transpose();
  return solve_checked(sys, b, "occupancy");
}

DiscrepancyReport decompose(const TabularMdp& m, const TabularMdp& m_r, double tol,
                            const std::optional<TransitionFault>& fault) {
  m.validate();
  m_r.validate();
  require_same_spaces(m, m_r);
  DiscrepancyReport rep;
  rep.q = value_iteration(m, tol).q;
  rep.q_r = value_iteration(m_r, tol).q;
  rep.v = state_values(rep.q);
  rep.v_r = state_values(rep.q_r);

  TabularMdp seen_r = m_r;
  if (fault) {
    if (fault->state >= m.states || fault->action >= m.actions || fault->next_state >= m.states) {
      throw ConfigError("transition fault indexes outside the MDP");
    }
    seen_r.P[(fault->state * m.actions + fault->action) * m.states + fault->next_state] += fault->delta;
  }

  const std::size_t S = m.states, A = m.actions;
  rep.delta_r.resize(S, A);
  rep.term_i.resize(S, A);
  rep.term_ii.resize(S, A);
  rep.residual.resize(S, A);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t a = 0; a < A; ++a) {
      double ti = 0.0, tii = 0.0;
      for (std::size_t s2 = 0; s2 < S; ++s2) {
        ti += m.p(s, a, s2) * (rep.v[s2] - rep.v_r[s2]);
        tii += (m.p(s, a, s2) - seen_r.p(s, a, s2)) * rep.v_r[s2];
      }
      rep.delta_r(s, a) = m.reward(s, a) - m_r.reward(s, a);
      rep.term_i(s, a) = m.gamma * ti;
      rep.term_ii(s, a) = m.gamma * tii;
      rep.residual(s, a) =
          (rep.q(s, a) - rep.q_r(s, a)) - (rep.delta_r(s, a) + rep.term_i(s, a) + rep.term_ii(s, a));
    }
  }
  rep.max_residual = rep.residual.cwiseAbs().maxCoeff();
  rep.lhs = (rep.q - rep.q_r).cwiseAbs().maxCoeff();

  const auto pi = greedy_policy(rep.q);
  const auto pi_r = greedy_policy(rep.q_r);
  const MatrixXd pm = policy_matrix(pi, A);
  const MatrixXd pm_r = policy_matrix(pi_r, A);
  std::vector<double> per_state(S);
  for (std::size_t s = 0; s < S; ++s) {
    const VectorXd a = pm.row(s).transpose();
    const VectorXd b = pm_r.row(s).transpose();
    per_state[s] = tv(std::span(a.data(), A), std::span(b.data(), A));
  }
  rep.eps_pi = *std::max_element(per_state.begin(), per_state.end());
  const VectorXd rho = occupancy(m_r, pm_r, m_r.mu0);
  rep.eps_rho = 0.0;
  for (std::size_t s = 0; s < S; ++s) rep.eps_rho += rho[s] * per_state[s];
  return rep;
}

BoundReport bound_rhs(const TabularMdp& m, const TabularMdp& m_r, const DiscrepancyReport& rep) {
  require_same_spaces(m, m_r);
  const double g = m.gamma;
  const double r_max = std::max(m.r_max(), m_r.r_max());
  BoundReport b;
  b.lhs = rep.lhs;
  b.reward_term = rep.delta_r.cwiseAbs().maxCoeff() / (1.0 - g);
  b.policy_term = 2.0 * g * r_max / ((1.0 - g) * (1.0 - g)) * rep.eps_pi;
  b.occupancy_term = g / (1.0 - g) * rep.v_r.maxCoeff() * rep.eps_rho;
  b.rhs = b.reward_term + b.policy_term + b.occupancy_term;
  return b;
}

BoundReport bound_rhs(const TabularMdp& m, const TabularMdp& m_r) {
  return bound_rhs(m, m_r, decompose(m, m_r));
}

MdpPair random_pair(std::size_t id, std::uint64_t seed, std::size_t max_states, std::size_t max_actions,
                    double gamma_min, double gamma_max) {
  if (max_states == 0 || max_actions == 0) throw ConfigError("random_pair: sizes must be positive");
  if (!(gamma_min >= 0.0 && gamma_min <= gamma_max && gamma_max < 1.0)) {
    throw ConfigError("random_pair: need 0 <= gamma_min <= gamma_max < 1");
  }
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(id)}));
  MdpPair pair;
  pair.id = id;
  const std::size_t S = 1 + static_cast<std::size_t>(rng() % max_states);
  const std::size_t A = 1 + static_cast<std::size_t>(rng() % max_actions);
  const double gamma = uniform(rng, gamma_min, gamma_max);
  auto fill = [&](TabularMdp& t) {
    t.states = S;
    t.actions = A;
    t.gamma = gamma;
    t.P.clear();
    for (std::size_t k = 0; k < S * A; ++k) {
      const auto row = random_simplex(rng, S);
      t.P.insert(t.P.end(), row.begin(), row.end());
    }
    t.r.resize(S * A);
    for (double& v : t.r) v = uniform(rng, -1.0, 1.0);
    t.mu0 = random_simplex(rng, S);
  };
  fill(pair.m);
  fill(pair.m_r);
  // M_R: M's dynamics mixed towards fresh ones, rewards perturbed
  const double mix = uniform(rng, 0.0, 0.5);
  const double noise = uniform(rng, 0.0, 0.3);
  for (std::size_t k = 0; k < pair.m.P.size(); ++k) {
    pair.m_r.P[k] = (1.0 - mix) * pair.m.P[k] + mix * pair.m_r.P[k];
  }
  for (std::size_t k = 0; k < pair.m.r.size(); ++k) pair.m_r.r[k] = pair.m.r[k] + noise * uniform(rng, -1.0, 1.0);
  pair.m_r.mu0 = pair.m.mu0;
  // exact row sums after mixing
  for (auto* t : {&pair.m, &pair.m_r}) {
    for (std::size_t k = 0; k < S * A; ++k) {
      double sum = 0.0;
      for (std::size_t s2 = 0; s2 < S; ++s2) sum += t->P[k * S + s2];
      for (std::size_t s2 = 0; s2 < S; ++s2) t->P[k * S + s2] /= sum;
    }
  }
  return pair;
}

nlohmann::json to_json(const TabularMdp& m) {
  return {{"states", m.states}, {"actions", m.actions}, {"gamma", m.gamma},
          {"P", m.P},           {"r", m.r},             {"mu0", m.mu0}};
}

TabularMdp mdp_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("MDP JSON must be an object");
  for (const auto& [key, _] : j.items()) {
    if (key != "states" && key != "actions" && key != "gamma" && key != "P" && key != "r" && key != "mu0") {
      throw ConfigError("unknown MDP key '" + key + "'");
    }
  }
  TabularMdp m;
  try {
    m.states = j.at("states").get<std::size_t>();
    m.actions = j.at("actions").get<std::size_t>();
    m.gamma = j.at("gamma").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("MDP JSON: ") + e.what());
  }
  m.P = json_doubles(j, "P");
  m.r = json_doubles(j, "r");
  m.mu0 = json_doubles(j, "mu0");
  m.validate();
  return m;
}

nlohmann::json to_json(const MdpPair& p) { return {{"id", p.id}, {"M", to_json(p.m)}, {"M_R", to_json(p.m_r)}}; }

MdpPair pair_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("M") || !j.contains("M_R")) throw ConfigError("MDP pair needs 'M' and 'M_R'");
  for (const auto& [key, _] : j.items()) {
    if (key != "id" && key != "M" && key != "M_R") throw ConfigError("unknown MDP pair key '" + key + "'");
  }
  MdpPair p;
  p.id = j.value("id", std::size_t{0});
  p.m = mdp_from_json(j.at("M"));
  p.m_r = mdp_from_json(j.at("M_R"));
  require_same_spaces(p.m, p.m_r);
  return p;
}

}  // namespace loopsr::mdpgap

#include "loopsr/mdpgap/sweep.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "loopsr/common/error.hpp"
#include "loopsr/common/parallel.hpp"

namespace loopsr::mdpgap {

void SweepConfig::validate() const {
  if (explicit_pairs.empty() && pairs == 0) throw ConfigError("theory.pairs must be positive");
  if (max_states == 0 || max_actions == 0) throw ConfigError("theory.max_states and max_actions must be positive");
  if (!(gamma_min >= 0.0 && gamma_min <= gamma_max && gamma_max < 1.0)) {
    throw ConfigError("theory.gamma_min/gamma_max must satisfy 0 <= min <= max < 1");
  }
  if (!(vi_tolerance > 0.0) || !(identity_tolerance > 0.0)) throw ConfigError("theory tolerances must be positive");
}

nlohmann::json to_json(const SweepConfig& c) {
  nlohmann::json j{{"pairs", c.pairs},
                   {"seed", c.seed},
                   {"max_states", c.max_states},
                   {"max_actions", c.max_actions},
                   {"gamma_min", c.gamma_min},
                   {"gamma_max", c.gamma_max},
                   {"vi_tolerance", c.vi_tolerance},
                   {"identity_tolerance", c.identity_tolerance}};
  if (!c.explicit_pairs.empty()) {
    j["mdp_pairs"] = nlohmann::json::array();
    for (const auto& p : c.explicit_pairs) j["mdp_pairs"].push_back(to_json(p));
  }
  if (c.fault_pair) {
    j["fault"] = {{"pair", *c.fault_pair},
                  {"state", c.fault.state},
                  {"action", c.fault.action},
                  {"next_state", c.fault.next_state},
                  {"delta", c.fault.delta}};
  }
  return j;
}

SweepConfig sweep_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("theory config must be an object");
  static const std::set<std::string> known{"pairs",     "seed",         "max_states",         "max_actions",
                                           "gamma_min", "gamma_max",    "vi_tolerance",       "identity_tolerance",
                                           "mdp_pairs", "fault"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown key 'theory." + key + "'");
  }
  SweepConfig c;
  try {
    c.pairs = j.value("pairs", c.pairs);
    c.seed = j.value("seed", c.seed);
    c.max_states = j.value("max_states", c.max_states);
    c.max_actions = j.value("max_actions", c.max_actions);
    c.gamma_min = j.value("gamma_min", c.gamma_min);
    c.gamma_max = j.value("gamma_max", c.gamma_max);
    c.vi_tolerance = j.value("vi_tolerance", c.vi_tolerance);
    c.identity_tolerance = j.value("identity_tolerance", c.identity_tolerance);
    if (j.contains("mdp_pairs")) {
      for (const auto& p : j.at("mdp_pairs")) c.explicit_pairs.push_back(pair_from_json(p));
    }
    if (j.contains("fault")) {
      const auto& f = j.at("fault");
      for (const auto& [key, _] : f.items()) {
        if (key != "pair" && key != "state" && key != "action" && key != "next_state" && key != "delta") {
          throw ConfigError("unknown key 'theory.fault." + key + "'");
        }
      }
      c.fault_pair = f.at("pair").get<std::size_t>();
      c.fault.state = f.value("state", std::size_t{0});
      c.fault.action = f.value("action", std::size_t{0});
      c.fault.next_state = f.value("next_state", std::size_t{0});
      c.fault.delta = f.value("delta", 1e-3);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("theory config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<MdpPair> sweep_pairs(const SweepConfig& cfg) {
  if (!cfg.explicit_pairs.empty()) return cfg.explicit_pairs;
  std::vector<MdpPair> out;
  out.reserve(cfg.pairs);
  for (std::size_t i = 0; i < cfg.pairs; ++i) {
    out.push_back(random_pair(i, cfg.seed, cfg.max_states, cfg.max_actions, cfg.gamma_min, cfg.gamma_max));
  }
  return out;
}

SweepResult run_sweep(const SweepConfig& cfg) {
  cfg.validate();
  const auto pairs = sweep_pairs(cfg);
  SweepResult result;
  result.rows.resize(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto& p = pairs[i];
    std::optional<TransitionFault> fault;
    if (cfg.fault_pair && *cfg.fault_pair == p.id) fault = cfg.fault;
    const auto rep = decompose(p.m, p.m_r, cfg.vi_tolerance, fault);
    SweepRow& row = result.rows[i];
    row.pair_id = p.id;
    row.states = p.m.states;
    row.actions = p.m.actions;
    row.gamma = p.m.gamma;
    row.bound = bound_rhs(p.m, p.m_r, rep);
    row.max_residual = rep.max_residual;
    row.eps_pi = rep.eps_pi;
    row.eps_rho = rep.eps_rho;
  });
  std::size_t holds = 0;
  for (const auto& row : result.rows) {
    result.max_residual = std::max(result.max_residual, row.max_residual);
    if (!(row.max_residual < cfg.identity_tolerance)) result.identity_failures.push_back(row.pair_id);
    holds += row.bound.holds() ? 1 : 0;
  }
  result.fraction_bound_holds =
      result.rows.empty() ? 0.0 : static_cast<double>(holds) / static_cast<double>(result.rows.size());
  return result;
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result) {
  std::ofstream out(path);
  if (!out) throw FormatError(FormatErrorKind::kIo, "cannot write " + path.string());
  out << "pair_id,states,actions,gamma,lhs,rhs,reward_term,policy_term,occupancy_term,max_residual,eps_pi,eps_rho,"
         "bound_holds\n";
  for (const auto& r : result.rows) {
    out << fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{}\n",
                       r.pair_id, r.states, r.actions, r.gamma, r.bound.lhs, r.bound.rhs, r.bound.reward_term,
                       r.bound.policy_term, r.bound.occupancy_term, r.max_residual, r.eps_pi, r.eps_rho,
                       r.bound.holds() ? 1 : 0);
  }
}

nlohmann::json failure_dump(const SweepConfig& cfg, const SweepResult& result) {
  SweepConfig dump = cfg;
  const auto pairs = sweep_pairs(cfg);
  dump.explicit_pairs.clear();
  for (std::size_t id : result.identity_failures) {
    for (const auto& p : pairs) {
      if (p.id == id) dump.explicit_pairs.push_back(p);
    }
  }
  dump.pairs = dump.explicit_pairs.size();
  return to_json(dump);
}

}  // namespace loopsr::mdpgap

#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "loopsr/mdpgap/mdp.hpp"

namespace loopsr::mdpgap {

struct SweepConfig {
  std::size_t pairs = 100;
  std::uint64_t seed = 0;
  std::size_t max_states = 10;
  std::size_t max_actions = 5;
  double gamma_min = 0.5;
  double gamma_max = 0.99;
  double vi_tolerance = 1e-12;
  double identity_tolerance = 1e-9;
  // explicit pairs replace the generated ones (reproduction dumps)
  std::vector<MdpPair> explicit_pairs;
  std::optional<std::size_t> fault_pair;
  TransitionFault fault;

  void validate() const;
};

nlohmann::json to_json(const SweepConfig& c);
// Unknown keys raise ConfigError naming the key.
SweepConfig sweep_config_from_json(const nlohmann::json& j);

struct SweepRow {
  std::size_t pair_id = 0;
  std::size_t states = 0;
  std::size_t actions = 0;
  double gamma = 0.0;
  BoundReport bound;
  double max_residual = 0.0;
  double eps_pi = 0.0;
  double eps_rho = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<std::size_t> identity_failures;  // pair ids
  double max_residual = 0.0;
  double fraction_bound_holds = 0.0;
};

// Pairs are independent and processed in parallel; output order is by pair id.
SweepResult run_sweep(const SweepConfig& cfg);
std::vector<MdpPair> sweep_pairs(const SweepConfig& cfg);

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& result);

// Config that regenerates the failing pairs exactly (fault included).
nlohmann::json failure_dump(const SweepConfig& cfg, const SweepResult& result);

}  // namespace loopsr::mdpgap

#include "loopsr/cli/app.hpp"

#include <optional>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "loopsr/cli/commands.hpp"
#include "loopsr/common/error.hpp"

namespace loopsr::cli {

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> loops;
  std::string test_terrain;
  std::optional<double> test_difficulty;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "JSON run config");
  sub->add_option("--seed", o.seed, "Override the config seed");
  sub->add_option("--out", o.out, "Run (or report) directory");
  sub->add_option("--loops", o.loops, "Override loop.loops");
  sub->add_option("--test-terrain", o.test_terrain, "Override test_env.terrain");
  sub->add_option("--test-difficulty", o.test_difficulty, "Override test_env.difficulty");
}

// --config wins; otherwise a run directory's resolved config; otherwise defaults.
RunConfig resolve(const Overrides& o, bool use_run_config) {
  RunConfig cfg;
  if (!o.config.empty()) {
    cfg = load_config(o.config);
  } else {
    const fs::path dir = o.out.empty() ? fs::path(RunConfig{}.out) : fs::path(o.out);
    if (use_run_config && fs::exists(RunPaths{dir}.config())) {
      cfg = load_config(RunPaths{dir}.config());
    } else {
      cfg = config_from_json(nlohmann::json::object());
    }
  }
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) cfg.out = o.out;
  if (o.loops) cfg.loop.loops = *o.loops;
  if (!o.test_terrain.empty()) cfg.test_env.terrain = terrasim::parse_terrain(o.test_terrain);
  if (o.test_difficulty) cfg.test_env.difficulty = *o.test_difficulty;
  cfg.validate();
  return cfg;
}

}  // namespace

int run_app(const std::vector<std::string>& args) {
  CLI::App app{"loopsr: sim-to-real adaptation loop at desk scale"};
  app.require_subcommand(1);
  Overrides o;
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain policy, dataset, codec and reference store");
  auto* adapt = app.add_subcommand("adapt", "Adaptation loops on the test environment");
  auto* eval = app.add_subcommand("eval", "Evaluate run policies over the terrain grid");
  auto* theory = app.add_subcommand("theory", "Tabular MDP gap decomposition sweep");
  auto* ablate = app.add_subcommand("ablate", "Codec and soft-update ablations");
  for (auto* sub : {pretrain, adapt, eval, theory, ablate}) add_common(sub, o);

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (pretrain->parsed()) {
      const auto cfg = resolve(o, false);
      cmd_pretrain(cfg, cfg.out);
    } else if (adapt->parsed()) {
      const auto cfg = resolve(o, true);
      cmd_adapt(cfg, cfg.out);
    } else if (eval->parsed()) {
      const auto cfg = resolve(o, true);
      cmd_eval(cfg, cfg.out);
    } else if (theory->parsed()) {
      const auto cfg = resolve(o, false);
      const auto outcome = cmd_theory(cfg, cfg.out);
      spdlog::info("theory: {} pairs, max identity residual {:.3e}, bound holds on {:.1f}%",
                   outcome.result.rows.size(), outcome.result.max_residual,
                   100.0 * outcome.result.fraction_bound_holds);
      if (!outcome.identity_ok) {
        spdlog::error("identity failed on {} pairs; reproduction config in {}",
                      outcome.result.identity_failures.size(), (fs::path(cfg.out) / "failing_pairs.json").string());
        return kExitNumerical;
      }
    } else if (ablate->parsed()) {
      const auto cfg = resolve(o, true);
      cmd_ablate(cfg, cfg.out);
    }
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kExitConfig;
  } catch (const MissingArtifactError& e) {
    spdlog::error("{}", e.what());
    return kExitArtifact;
  } catch (const FormatError& e) {
    spdlog::error("unreadable artifact: {}", e.what());
    return kExitArtifact;
  } catch (const NumericalError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return kExitNumerical;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("filesystem: {}", e.what());
    return 1;
  }
  return kExitOk;
}

}  // namespace loopsr::cli

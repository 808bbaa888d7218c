#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "loopsr/cli/config.hpp"
#include "loopsr/latentstore/store.hpp"
#include "loopsr/mdpgap/sweep.hpp"

namespace loopsr::cli {

namespace fs = std::filesystem;

// Run directory layout.
struct RunPaths {
  fs::path root;

  fs::path config() const { return root / "config.json"; }
  fs::path policy() const { return root / "checkpoints" / "policy.lsrw"; }
  fs::path codec() const { return root / "checkpoints" / "codec.lsrw"; }
  fs::path adapted() const { return root / "checkpoints" / "adapted.lsrw"; }
  fs::path dataset() const { return root / "dataset" / "trajectories.lsrt"; }
  fs::path store() const { return root / "store" / "reference.lsrs"; }
  fs::path metrics(const std::string& name) const { return root / "metrics" / name; }
};

struct PretrainArtifacts {
  numgrad::ParamSet policy;
  std::vector<terrasim::TrajectoryRecord> dataset;
  trajcodec::Codec codec;
  latentstore::ReferenceStore store;
};

// Policy pretraining with the co-scheduled encoder, offline codec epochs and
// the reference store. Writes the resolved config, checkpoints, dataset,
// store and metrics under `run`.
PretrainArtifacts cmd_pretrain(const RunConfig& cfg, const fs::path& run);
// Raises MissingArtifactError naming the first absent file.
PretrainArtifacts load_artifacts(const RunPaths& paths);

struct AdaptSummary {
  terrasim::Terrain terrain = terrasim::Terrain::kStairs;
  double difficulty = 0.0;
  double origin_reward = 0.0;   // same training budget on the full randomization
  double adapted_reward = 0.0;  // after the adaptation loops
  double expert_reward = 0.0;   // same training budget on the target itself
  numgrad::ParamSet adapted;
  std::vector<loopctl::LoopRecord> records;
};

// Adaptation loops on cfg.test_env plus the Origin and Expert references.
// Nothing is written to disk.
AdaptSummary run_adaptation(const RunConfig& cfg, const PretrainArtifacts& art);
AdaptSummary cmd_adapt(const RunConfig& cfg, const fs::path& run);

// Pretrained (and adapted, when present) policy over every terrain and
// difficulty of the grid, on the test-env robot.
void cmd_eval(const RunConfig& cfg, const fs::path& run);

struct TheoryOutcome {
  mdpgap::SweepResult result;
  bool identity_ok = true;
};

// Writes theory.csv and theory_summary.json, plus failing_pairs.json when the
// identity check fails.
TheoryOutcome cmd_theory(const RunConfig& cfg, const fs::path& out);

inline constexpr std::array<const char*, 4> kVariantNames{"LSR", "LSR-w/o-con", "LSR-w/o-AE", "LSR-w/o-su"};

struct IdentificationScore {
  std::array<std::size_t, terrasim::kTerrainCount> correct{};
  std::array<std::size_t, terrasim::kTerrainCount> total{};
  // retrieval vote alone, before fusion with the heads (held-out scoring only)
  std::array<std::size_t, terrasim::kTerrainCount> knn_correct{};
  double friction_error = 0.0;  // mean |estimate - truth| / half-width
  double mass_error = 0.0;
  std::size_t count = 0;

  double accuracy() const;
  double knn_accuracy() const;
  // Slope pools SlopeUp and SlopeDown; Plain is Flat.
  double slope_accuracy() const;
  double stair_accuracy() const;
  double plain_accuracy() const;
  double terrain_accuracy(terrasim::Terrain t) const;
};

struct AblationResult {
  // codec variants (LSR, w/o-con, w/o-AE) on single held-out trajectories
  std::array<IdentificationScore, 3> heldout;
  // all four variants over identification loops on fresh scenarios
  std::array<IdentificationScore, 4> loops;
  std::size_t train_size = 0;
  std::size_t holdout_size = 0;
};

IdentificationScore score_heldout(const trajcodec::Codec& codec, const latentstore::ReferenceStore& store,
                                  std::span<const terrasim::TrajectoryRecord> heldout, std::size_t neighbors,
                                  double alpha, const terrasim::RobotParams& half_width);

// Per-epoch codec records go to `log` when given.
AblationResult run_ablation(const RunConfig& cfg, const PretrainArtifacts& art,
                            const std::function<void(const nlohmann::json&)>& log = {});
AblationResult cmd_ablate(const RunConfig& cfg, const fs::path& run);

}  // namespace loopsr::cli

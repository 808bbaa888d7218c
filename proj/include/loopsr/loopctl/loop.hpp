#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"
#include "loopsr/latentstore/store.hpp"
#include "loopsr/ppo/trainer.hpp"
#include "loopsr/trajcodec/codec.hpp"

namespace loopsr::loopctl {

using latentstore::ParamEstimate;
using terrasim::RobotParams;
using terrasim::TerrainDist;

struct LoopConfig {
  double alpha = 0.8;
  double tau = 0.7;
  std::size_t neighbors = 16;
  std::size_t trajectories_per_batch = 5;
  std::size_t iterations_per_episode = 200;
  std::size_t episodes_per_redeploy = 10;
  std::size_t loops = 10;
  std::size_t eval_episodes = 10;
  RobotParams dr_range = terrasim::robot_full_range();  // R; continual training uses R / 2
  std::vector<double> difficulties{terrasim::kDifficulties.begin(), terrasim::kDifficulties.end()};
  ppo::TrainerConfig trainer;

  void validate() const;
  RobotParams continual_range() const;
};

// tau * current + (1 - tau) * estimate, componentwise.
TerrainDist soft_update(const TerrainDist& current, const TerrainDist& estimate, double tau);

struct RandomizationSpec {
  RobotParams centre;
  RobotParams half_width;
  RobotParams lower;  // sampling interval after truncation at the global ranges
  RobotParams upper;
  bool clamped = false;  // the estimate itself was outside the global ranges
};

RandomizationSpec apply_robot_params(const RobotParams& estimate, const RobotParams& half_width);

struct CurrentParams {
  TerrainDist c_e = terrasim::uniform_terrain();
  RobotParams c_r = terrasim::robot_midpoint();
};

// Deployment side of the loop. Records come back without reward channels;
// whatever labels they carry must not influence the loop.
class DeploymentTarget {
 public:
  virtual ~DeploymentTarget() = default;
  virtual std::vector<terrasim::TrajectoryRecord> collect(const numgrad::ParamSet& policy, std::size_t count,
                                                          std::uint64_t seed) = 0;
  virtual ppo::EvalMetrics evaluate(const numgrad::ParamSet& policy, std::size_t episodes,
                                    std::uint64_t seed) = 0;
};

struct TestEnvSpec {
  terrasim::Terrain terrain = terrasim::Terrain::kStairs;
  double difficulty = 0.9;
  RobotParams robot{1.2, 0.8, 0.8, 0.1};

  terrasim::EnvParams env_params() const;
};

enum class LabelMode {
  kHidden,    // records carry no label
  kPoisoned,  // records carry deliberately wrong labels
  kTrue,      // records carry the true label (test-harness oracles only)
};

class SimulatedTarget : public DeploymentTarget {
 public:
  explicit SimulatedTarget(TestEnvSpec spec, LabelMode labels = LabelMode::kHidden);
  std::vector<terrasim::TrajectoryRecord> collect(const numgrad::ParamSet& policy, std::size_t count,
                                                  std::uint64_t seed) override;
  ppo::EvalMetrics evaluate(const numgrad::ParamSet& policy, std::size_t episodes, std::uint64_t seed) override;

 private:
  TestEnvSpec spec_;
  LabelMode labels_;
};

struct Identification {
  ParamEstimate retrieved;
  ParamEstimate decoded;
  latentstore::FusedParams fused;
  std::vector<double> z;  // batch latent
};

using Identifier = std::function<Identification(std::span<const terrasim::TrajectoryRecord>)>;

// Batch latent = mean of per-trajectory z renormalized; kNN retrieval and the
// codec heads, fused with alpha.
Identifier codec_identifier(const trajcodec::Codec& codec, const latentstore::ReferenceStore& store,
                            std::size_t neighbors, double alpha);

struct LoopRecord {
  std::size_t loop = 0;
  Identification id;
  CurrentParams current;  // after the update
  RandomizationSpec randomization;
  double train_reward = 0.0;  // mean per-step reward over the loop's iterations
  std::uint64_t env_steps = 0;
  std::size_t policy_version = 0;  // number of redeploys so far
  bool diverged = false;
  ppo::EvalMetrics eval;  // training policy on the target
};

nlohmann::json to_json(const LoopRecord& r);

struct LoopResult {
  numgrad::ParamSet policy;
  CurrentParams current;
  std::vector<LoopRecord> records;
};

using LoopHook = std::function<void(const LoopRecord&)>;

LoopResult adaptation_loop(const LoopConfig& cfg, const numgrad::ParamSet& policy, const Identifier& identify,
                           DeploymentTarget& target, std::uint64_t seed, const LoopHook& hook = {});

// PPO continued from `policy` on `domain` for `iterations` with a fresh optimizer.
numgrad::ParamSet continue_training(const numgrad::ParamSet& policy, const ppo::TrainerConfig& cfg,
                                    const ppo::TrainingDomain& domain, std::size_t iterations,
                                    std::uint64_t seed);

}  // namespace loopsr::loopctl

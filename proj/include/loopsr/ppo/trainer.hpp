#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "loopsr/common/error.hpp"
#include "loopsr/common/rng.hpp"
#include "loopsr/numgrad/adam.hpp"
#include "loopsr/ppo/nets.hpp"
#include "loopsr/ppo/ppo.hpp"
#include "loopsr/terrasim/env.hpp"
#include "loopsr/terrasim/trajectory.hpp"

namespace loopsr::ppo {

// Randomization over episodes: terrain from `terrain`, difficulty uniform over
// `difficulties`, robot parameters uniform in robot +- dr_range.
struct TrainingDomain {
  terrasim::TerrainDist terrain = terrasim::uniform_terrain();
  std::vector<double> difficulties{terrasim::kDifficulties.begin(), terrasim::kDifficulties.end()};
  terrasim::RobotParams robot = terrasim::robot_midpoint();
  terrasim::RobotParams dr_range = terrasim::robot_full_range();

  void validate() const;
  terrasim::Env make_env(std::uint64_t seed) const;
};

struct TrainerConfig {
  std::size_t envs = 64;
  std::size_t steps_per_iteration = 24;
  PpoConfig ppo;
};

struct IterationStats {
  std::size_t iteration = 0;
  double mean_reward = 0.0;  // per environment step, this iteration
  std::uint64_t env_steps = 0;  // cumulative
  PpoStats ppo;
};

// Raised when an iteration produces non-finite rewards or losses. The trainer
// has already rolled its parameters back to `last_good`.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(std::size_t iteration, const std::string& detail, numgrad::ParamSet last_good)
      : NumericalError("ppo iteration " + std::to_string(iteration), detail),
        iteration_(iteration),
        last_good_(std::move(last_good)) {}

  std::size_t iteration() const noexcept { return iteration_; }
  const numgrad::ParamSet& last_good() const noexcept { return last_good_; }

 private:
  std::size_t iteration_;
  numgrad::ParamSet last_good_;
};

// Parallel-env PPO. Episodes that hit the time limit bootstrap with gamma V of
// their final state rather than treating the limit as terminal.
class Trainer {
 public:
  Trainer(numgrad::ParamSet params, TrainerConfig cfg, TrainingDomain domain, std::uint64_t seed);

  IterationStats iterate();

  // Switches the randomization and restarts every env on the new domain.
  void set_domain(TrainingDomain domain);

  const numgrad::ParamSet& params() const { return params_; }
  std::size_t iteration() const { return iteration_; }
  std::uint64_t env_steps() const { return env_steps_; }
  const TrainingDomain& domain() const { return domain_; }

 private:
  void reset_slot(std::size_t slot);

  numgrad::ParamSet params_;
  TrainerConfig cfg_;
  TrainingDomain domain_;
  std::uint64_t seed_;
  numgrad::AdamState adam_;
  Rng rng_;
  std::vector<terrasim::Env> envs_;
  std::vector<std::uint64_t> episodes_;
  std::uint64_t domain_generation_ = 0;
  std::size_t iteration_ = 0;
  std::uint64_t env_steps_ = 0;
};

// Rolls out one episode with the actor: the mean action, or a Gaussian sample
// drawn from `rng` when `rng` is given.
terrasim::RolloutResult run_policy(const numgrad::ParamSet& params, terrasim::Env& env, Rng* rng,
                                   const terrasim::RolloutOptions& opts = {});

// `count` labeled trajectories from fresh domain episodes with the stochastic
// policy, tagged with `checkpoint_id`.
std::vector<terrasim::TrajectoryRecord> collect_dataset(const numgrad::ParamSet& params,
                                                        const TrainingDomain& domain,
                                                        std::size_t count,
                                                        std::uint32_t checkpoint_id,
                                                        std::uint64_t seed);

struct PretrainConfig {
  TrainerConfig trainer;
  NetConfig net;
  TrainingDomain domain;
  std::size_t iterations = 2000;
  std::size_t encoder_start = 1000;
  std::size_t dataset_checkpoints = 10;
  std::size_t trajectories_per_checkpoint = 256;
};

void validate(const PretrainConfig& cfg);

// Iterations at which dataset checkpoint k = 1..count is collected.
std::vector<std::size_t> checkpoint_iterations(std::size_t iterations, std::size_t count);

using EncoderHook =
    std::function<void(std::size_t iteration, std::span<const terrasim::TrajectoryRecord> dataset)>;
using IterationHook = std::function<void(const IterationStats&)>;

struct PretrainResult {
  numgrad::ParamSet policy;
  std::vector<terrasim::TrajectoryRecord> dataset;
  std::vector<IterationStats> history;
};

// Per iteration i = 1..n: PPO step, dataset collection when i is a checkpoint
// iteration, then the encoder hook when i > encoder_start.
PretrainResult pretrain(const PretrainConfig& cfg, std::uint64_t seed,
                        const EncoderHook& encoder = {}, const IterationHook& on_iteration = {});

struct EvalMetrics {
  double mean_reward = 0.0;    // per step, averaged over episodes
  double mean_velocity = 0.0;  // true velocity per step
  double distance = 0.0;       // final position, averaged over episodes
  std::size_t episodes = 0;
};

// Deterministic mean-action episodes, one per seed.
EvalMetrics evaluate(const numgrad::ParamSet& params, const terrasim::EnvParams& env,
                     std::span<const std::uint64_t> seeds);
EvalMetrics evaluate(const numgrad::ParamSet& params, const terrasim::EnvParams& env,
                     std::size_t episodes, std::uint64_t base_seed);

struct PolicyCheckpoint {
  numgrad::ParamSet params;
  std::uint64_t iteration = 0;
  std::uint64_t config_hash = 0;
};

void save_policy(const std::filesystem::path& path, const PolicyCheckpoint& ckpt);
PolicyCheckpoint load_policy(const std::filesystem::path& path);

}  // namespace loopsr::ppo

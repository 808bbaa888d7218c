#include "loopsr/loopctl/loop.hpp"

#include <algorithm>
#include <cmath>

#include "loopsr/common/error.hpp"
#include "loopsr/common/parallel.hpp"
#include "loopsr/common/rng.hpp"

namespace loopsr::loopctl {

namespace {

using terrasim::kRobotDim;
using terrasim::kTerrainCount;

constexpr std::uint64_t kTagCollect = 31;
constexpr std::uint64_t kTagEval = 32;
constexpr std::uint64_t kTagTrainer = 33;
constexpr std::uint64_t kTagRecover = 34;

nlohmann::json robot_json(const RobotParams& r) {
  return {{"mass", r.mass}, {"friction", r.friction}, {"motor", r.motor}, {"restitution", r.restitution}};
}

nlohmann::json estimate_json(const ParamEstimate& p) { return {{"c_e", p.c_e}, {"c_r", robot_json(p.c_r)}}; }

}  // namespace

void LoopConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("loop.alpha must lie in [0, 1]");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("loop.tau must lie in [0, 1]");
  if (neighbors == 0) throw ConfigError("loop.neighbors must be positive");
  if (trajectories_per_batch == 0) throw ConfigError("loop.trajectories_per_batch must be positive");
  if (episodes_per_redeploy == 0) throw ConfigError("loop.episodes_per_redeploy must be positive");
  if (eval_episodes == 0) throw ConfigError("loop.eval_episodes must be positive");
  if (difficulties.empty()) throw ConfigError("loop.difficulties must not be empty");
  for (double d : difficulties) {
    if (!terrasim::is_grid_difficulty(d)) throw ConfigError("loop.difficulties must come from {0.3, 0.6, 0.9}");
  }
  const auto r = dr_range.to_array();
  for (std::size_t k = 0; k < kRobotDim; ++k) {
    if (!(r[k] >= 0.0) || r[k] > terrasim::kRobotUpper[k] - terrasim::kRobotLower[k]) {
      throw ConfigError(std::string("loop.dr_range.") + terrasim::kRobotNames[k] + " out of range");
    }
  }
}

RobotParams LoopConfig::continual_range() const {
  auto r = dr_range.to_array();
  for (double& v : r) v *= 0.5;
  return RobotParams::from_array(r);
}

TerrainDist soft_update(const TerrainDist& current, const TerrainDist& estimate, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("soft update ratio tau must lie in [0, 1]");
  terrasim::check_simplex(current);
  terrasim::check_simplex(estimate);
  TerrainDist out{};
  for (std::size_t k = 0; k < kTerrainCount; ++k) out[k] = tau * current[k] + (1.0 - tau) * estimate[k];
  return out;
}

RandomizationSpec apply_robot_params(const RobotParams& estimate, const RobotParams& half_width) {
  RandomizationSpec spec;
  spec.centre = terrasim::clamp_to_global(estimate);
  spec.clamped = !(spec.centre == estimate);
  spec.half_width = half_width;
  const auto c = spec.centre.to_array();
  const auto r = half_width.to_array();
  std::array<double, kRobotDim> lo{}, hi{};
  for (std::size_t k = 0; k < kRobotDim; ++k) {
    if (!(r[k] >= 0.0)) throw ConfigError("randomization half-width must be >= 0");
    lo[k] = std::max(c[k] - r[k], terrasim::kRobotLower[k]);
    hi[k] = std::min(c[k] + r[k], terrasim::kRobotUpper[k]);
  }
  spec.lower = RobotParams::from_array(lo);
  spec.upper = RobotParams::from_array(hi);
  return spec;
}

terrasim::EnvParams TestEnvSpec::env_params() const {
  terrasim::EnvParams p;
  p.terrain = terrasim::one_hot(terrain);
  p.difficulty = difficulty;
  p.robot = robot;
  p.dr_range = {0.0, 0.0, 0.0, 0.0};
  return p;
}

SimulatedTarget::SimulatedTarget(TestEnvSpec spec, LabelMode labels) : spec_(spec), labels_(labels) {
  terrasim::validate(spec_.env_params());
}

std::vector<terrasim::TrajectoryRecord> SimulatedTarget::collect(const numgrad::ParamSet& policy, std::size_t count,
                                                                 std::uint64_t seed) {
  std::vector<terrasim::TrajectoryRecord> out(count);
  const auto params = spec_.env_params();
  parallel_for(count, [&](std::size_t i) {
    const std::uint64_t s = derive_seed(seed, {static_cast<std::uint64_t>(i)});
    terrasim::Env env(params, s);
    Rng rng(derive_seed(s, {1}));
    terrasim::RolloutOptions opts;
    opts.with_label = labels_ != LabelMode::kHidden;
    auto rec = ppo::run_policy(policy, env, &rng, opts).record;
    if (labels_ == LabelMode::kPoisoned) {
      rec.label->terrain = terrasim::terrain_from_index((static_cast<std::size_t>(spec_.terrain) + 2) % kTerrainCount);
      rec.label->difficulty = 0.3;
      rec.label->robot = RobotParams::from_array(terrasim::kRobotLower);
    }
    out[i] = std::move(rec);
  });
  return out;
}

ppo::EvalMetrics SimulatedTarget::evaluate(const numgrad::ParamSet& policy, std::size_t episodes,
                                           std::uint64_t seed) {
  return ppo::evaluate(policy, spec_.env_params(), episodes, seed);
}

Identifier codec_identifier(const trajcodec::Codec& codec, const latentstore::ReferenceStore& store,
                            std::size_t neighbors, double alpha) {
  if (store.empty()) throw ConfigError("identification needs a non-empty reference store");
  if (neighbors == 0 || neighbors > store.size()) throw ConfigError("neighbors must lie in [1, |store|]");
  return [&codec, &store, neighbors, alpha](std::span<const terrasim::TrajectoryRecord> batch) {
    if (batch.empty()) throw ConfigError("identification needs at least one trajectory");
    const trajcodec::Matrix z = trajcodec::encode_records(codec.params, codec.config, batch);
    Eigen::RowVectorXd mean = z.colwise().mean();
    const double n = mean.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericalError("identify", "batch latent has zero norm");
    mean /= n;
    Identification id;
    id.z.assign(mean.data(), mean.data() + mean.size());
    id.retrieved = latentstore::knn_retrieve(store, id.z, neighbors).mean;
    const auto heads = trajcodec::predict_heads(codec.params, id.z);
    id.decoded = {heads.terrain, heads.robot};
    id.fused = latentstore::fuse(id.retrieved, id.decoded, alpha);
    return id;
  };
}

nlohmann::json to_json(const LoopRecord& r) {
  return {{"loop", r.loop},
          {"retrieved", estimate_json(r.id.retrieved)},
          {"decoded", estimate_json(r.id.decoded)},
          {"fused", estimate_json(r.id.fused.value)},
          {"fused_clamped", r.id.fused.clamped},
          {"current", {{"c_e", r.current.c_e}, {"c_r", robot_json(r.current.c_r)}}},
          {"randomization",
           {{"lower", robot_json(r.randomization.lower)}, {"upper", robot_json(r.randomization.upper)}}},
          {"train_reward", r.train_reward},
          {"env_steps", r.env_steps},
          {"policy_version", r.policy_version},
          {"diverged", r.diverged},
          {"eval",
           {{"mean_reward", r.eval.mean_reward},
            {"mean_velocity", r.eval.mean_velocity},
            {"distance", r.eval.distance},
            {"episodes", r.eval.episodes}}}};
}

LoopResult adaptation_loop(const LoopConfig& cfg, const numgrad::ParamSet& policy, const Identifier& identify,
                           DeploymentTarget& target, std::uint64_t seed, const LoopHook& hook) {
  cfg.validate();
  if (!identify) throw ConfigError("adaptation loop needs an identifier");
  if (policy.empty()) throw ConfigError("adaptation loop needs a policy");
  LoopResult result;
  numgrad::ParamSet deployed = policy;
  numgrad::ParamSet training = policy;
  std::optional<ppo::Trainer> trainer;
  std::size_t version = 0;
  std::uint64_t recoveries = 0;
  const RobotParams half = cfg.continual_range();
  const std::uint64_t eval_seed = derive_seed(seed, {kTagEval});

  for (std::size_t k = 0; k < cfg.loops; ++k) {
    LoopRecord rec;
    rec.loop = k;
    const auto batch = target.collect(deployed, cfg.trajectories_per_batch, derive_seed(seed, {kTagCollect, k}));
    rec.id = identify(batch);
    result.current.c_e = soft_update(result.current.c_e, rec.id.fused.value.c_e, cfg.tau);
    rec.randomization = apply_robot_params(rec.id.fused.value.c_r, half);
    result.current.c_r = rec.randomization.centre;
    rec.current = result.current;

    ppo::TrainingDomain domain;
    domain.terrain = result.current.c_e;
    domain.difficulties = cfg.difficulties;
    domain.robot = result.current.c_r;
    domain.dr_range = half;
    if (!trainer) {
      trainer.emplace(training, cfg.trainer, domain, derive_seed(seed, {kTagTrainer}));
    } else {
      trainer->set_domain(domain);
    }
    double reward = 0.0;
    std::size_t done = 0;
    for (std::size_t i = 0; i < cfg.iterations_per_episode; ++i) {
      try {
        reward += trainer->iterate().mean_reward;
        ++done;
      } catch (const ppo::DivergenceError& e) {
        // keep the last good weights and move on to the next loop
        rec.diverged = true;
        training = e.last_good();
        trainer.emplace(training, cfg.trainer, domain, derive_seed(seed, {kTagRecover, ++recoveries}));
        break;
      }
    }
    training = trainer->params();
    rec.train_reward = done ? reward / static_cast<double>(done) : 0.0;
    rec.env_steps = trainer->env_steps();
    if ((k + 1) % cfg.episodes_per_redeploy == 0) {
      deployed = training;
      ++version;
    }
    rec.policy_version = version;
    rec.eval = target.evaluate(training, cfg.eval_episodes, eval_seed);
    if (hook) hook(rec);
    result.records.push_back(std::move(rec));
  }
  result.policy = training;
  return result;
}

numgrad::ParamSet continue_training(const numgrad::ParamSet& policy, const ppo::TrainerConfig& cfg,
                                    const ppo::TrainingDomain& domain, std::size_t iterations,
                                    std::uint64_t seed) {
  ppo::Trainer trainer(policy, cfg, domain, seed);
  for (std::size_t i = 0; i < iterations; ++i) trainer.iterate();
  return trainer.params();
}

}  // namespace loopsr::loopctl

#include "loopsr/ppo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "loopsr/common/parallel.hpp"
#include "loopsr/numgrad/checkpoint.hpp"

namespace loopsr::ppo {

using numgrad::ParamSet;
using terrasim::Env;

namespace {

constexpr std::uint64_t kTagDifficulty = 11;
constexpr std::uint64_t kTagEpisode = 12;
constexpr std::uint64_t kTagUpdate = 13;
constexpr std::uint64_t kTagDataset = 14;
constexpr std::uint64_t kTagInit = 15;
constexpr std::uint64_t kTagTrainer = 16;

double row_value(const ParamSet& params, const terrasim::PrivilegedState& s) {
  return critic_value(params, make_priv_batch(std::span(&s, 1)))(0, 0);
}

}  // namespace

void TrainingDomain::validate() const {
  terrasim::check_simplex(terrain);
  if (difficulties.empty()) throw ConfigError("training domain needs at least one difficulty");
  for (double d : difficulties) {
    if (!terrasim::is_grid_difficulty(d)) throw ConfigError("difficulty " + std::to_string(d) + " not in {0.3, 0.6, 0.9}");
  }
  terrasim::EnvParams probe;
  probe.terrain = terrain;
  probe.difficulty = difficulties.front();
  probe.robot = robot;
  probe.dr_range = dr_range;
  terrasim::validate(probe);
}

Env TrainingDomain::make_env(std::uint64_t seed) const {
  terrasim::EnvParams p;
  p.terrain = terrain;
  Rng pick(derive_seed(seed, {kTagDifficulty}));
  p.difficulty = difficulties[static_cast<std::size_t>(pick() % difficulties.size())];
  p.robot = robot;
  p.dr_range = dr_range;
  return Env(p, seed);
}

Trainer::Trainer(ParamSet params, TrainerConfig cfg, TrainingDomain domain, std::uint64_t seed)
    : params_(std::move(params)),
      cfg_(cfg),
      domain_(std::move(domain)),
      seed_(seed),
      adam_(params_, numgrad::AdamConfig{cfg.ppo.lr, 0.9, 0.999, 1e-8, cfg.ppo.max_grad_norm}),
      rng_(derive_seed(seed, {kTagUpdate})) {
  validate(cfg_.ppo);
  domain_.validate();
  if (cfg_.envs == 0 || cfg_.steps_per_iteration == 0) throw ConfigError("trainer needs envs >= 1 and steps >= 1");
  episodes_.assign(cfg_.envs, 0);
  envs_.reserve(cfg_.envs);
  for (std::size_t i = 0; i < cfg_.envs; ++i) {
    envs_.push_back(domain_.make_env(derive_seed(seed_, {kTagEpisode, domain_generation_, i, 0})));
  }
}

void Trainer::reset_slot(std::size_t slot) {
  ++episodes_[slot];
  envs_[slot] = domain_.make_env(derive_seed(seed_, {kTagEpisode, domain_generation_, slot, episodes_[slot]}));
}

void Trainer::set_domain(TrainingDomain domain) {
  domain.validate();
  domain_ = std::move(domain);
  ++domain_generation_;
  for (std::size_t i = 0; i < envs_.size(); ++i) {
    episodes_[i] = 0;
    envs_[i] = domain_.make_env(derive_seed(seed_, {kTagEpisode, domain_generation_, i, 0}));
  }
}

IterationStats Trainer::iterate() {
  const std::size_t n_env = envs_.size();
  const std::size_t T = cfg_.steps_per_iteration;
  const double gamma = cfg_.ppo.gamma;
  ++iteration_;

  std::vector<terrasim::Observation> obs(n_env);
  std::vector<terrasim::PrivilegedState> priv(n_env);
  // env-major storage: slot i, step t at i * T + t
  std::vector<terrasim::Observation> buf_obs(n_env * T);
  std::vector<terrasim::PrivilegedState> buf_priv(n_env * T);
  std::vector<double> actions(n_env * T), log_probs(n_env * T), rewards(n_env * T);
  std::vector<double> values(n_env * (T + 1));
  std::vector<std::uint8_t> dones(n_env * T);
  double reward_sum = 0.0;

  const double log_std = actor_log_std(params_);
  const double sigma = std::exp(log_std);
  try {
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < n_env; ++i) {
        obs[i] = envs_[i].observation();
        priv[i] = envs_[i].privileged();
      }
      const Matrix mean = actor_mean(params_, make_obs_batch(obs));
      const Matrix value = critic_value(params_, make_priv_batch(priv));
      for (std::size_t i = 0; i < n_env; ++i) {
        const std::size_t k = i * T + t;
        const double mu = mean(static_cast<Eigen::Index>(i), 0);
        const double a = mu + sigma * normal(rng_);
        buf_obs[k] = obs[i];
        buf_priv[k] = priv[i];
        actions[k] = a;
        log_probs[k] = gaussian_log_prob(a, mu, log_std);
        values[i * (T + 1) + t] = value(static_cast<Eigen::Index>(i), 0);
        const terrasim::StepResult s = envs_[i].step(a);
        reward_sum += s.reward;
        rewards[k] = s.reward;
        if (s.done) {
          rewards[k] += gamma * row_value(params_, s.privileged);
          dones[k] = 1;
          reset_slot(i);
        }
      }
    }
    for (std::size_t i = 0; i < n_env; ++i) priv[i] = envs_[i].privileged();
    const Matrix last_value = critic_value(params_, make_priv_batch(priv));
    for (std::size_t i = 0; i < n_env; ++i) values[i * (T + 1) + T] = last_value(static_cast<Eigen::Index>(i), 0);
  } catch (const NumericalError& e) {
    throw DivergenceError(iteration_, e.what(), params_);
  }
  env_steps_ += n_env * T;

  IterationStats stats;
  stats.iteration = iteration_;
  stats.mean_reward = reward_sum / static_cast<double>(n_env * T);
  stats.env_steps = env_steps_;
  if (!std::isfinite(stats.mean_reward)) {
    throw DivergenceError(iteration_, "mean reward is not finite", params_);
  }

  RolloutBuffer buf;
  buf.obs = make_obs_batch(buf_obs);
  buf.priv = make_priv_batch(buf_priv);
  buf.actions = std::move(actions);
  buf.log_probs = std::move(log_probs);
  buf.advantages.resize(n_env * T);
  buf.returns.resize(n_env * T);
  for (std::size_t i = 0; i < n_env; ++i) {
    const GaeResult gae = compute_gae(std::span(rewards).subspan(i * T, T),
                                      std::span(values).subspan(i * (T + 1), T + 1),
                                      std::span(dones).subspan(i * T, T), gamma, cfg_.ppo.lambda);
    std::copy(gae.advantages.begin(), gae.advantages.end(), buf.advantages.begin() + static_cast<std::ptrdiff_t>(i * T));
    std::copy(gae.returns.begin(), gae.returns.end(), buf.returns.begin() + static_cast<std::ptrdiff_t>(i * T));
  }
  normalize_advantages(buf.advantages);

  ParamSet last_good = params_;
  numgrad::AdamState adam_backup = adam_;
  try {
    stats.ppo = ppo_update(params_, adam_, buf, cfg_.ppo, rng_);
  } catch (const NumericalError& e) {
    params_ = last_good;
    adam_ = std::move(adam_backup);
    throw DivergenceError(iteration_, e.what(), std::move(last_good));
  }
  return stats;
}

terrasim::RolloutResult run_policy(const ParamSet& params, Env& env, Rng* rng,
                                   const terrasim::RolloutOptions& opts) {
  const double log_std = actor_log_std(params);
  const double sigma = std::exp(log_std);
  auto policy = [&](const terrasim::Observation& o) {
    const double mu = actor_mean(params, make_obs_batch(std::span(&o, 1)))(0, 0);
    return rng ? mu + sigma * normal(*rng) : mu;
  };
  return terrasim::rollout(env, policy, opts);
}

std::vector<terrasim::TrajectoryRecord> collect_dataset(const ParamSet& params,
                                                        const TrainingDomain& domain,
                                                        std::size_t count,
                                                        std::uint32_t checkpoint_id,
                                                        std::uint64_t seed) {
  std::vector<terrasim::TrajectoryRecord> out(count);
  parallel_for(count, [&](std::size_t i) {
    const std::uint64_t s = derive_seed(seed, {kTagDataset, checkpoint_id, i});
    Env env = domain.make_env(s);
    Rng rng(derive_seed(s, {kTagDataset}));
    out[i] = run_policy(params, env, &rng, {terrasim::kEpisodeSteps, true, checkpoint_id}).record;
  });
  return out;
}

void validate(const PretrainConfig& cfg) {
  validate(cfg.trainer.ppo);
  cfg.domain.validate();
  if (cfg.iterations == 0) throw ConfigError("pretrain needs at least one iteration");
  if (cfg.trainer.envs == 0 || cfg.trainer.steps_per_iteration == 0) throw ConfigError("pretrain needs envs >= 1 and steps >= 1");
  if (cfg.net.hidden == 0) throw ConfigError("hidden width must be positive");
}

std::vector<std::size_t> checkpoint_iterations(std::size_t iterations, std::size_t count) {
  std::vector<std::size_t> out;
  for (std::size_t k = 1; k <= count; ++k) out.push_back((k * iterations + count - 1) / count);
  return out;
}

PretrainResult pretrain(const PretrainConfig& cfg, std::uint64_t seed, const EncoderHook& encoder,
                        const IterationHook& on_iteration) {
  validate(cfg);
  PretrainResult result;
  Trainer trainer(init_actor_critic(cfg.net, derive_seed(seed, {kTagInit})), cfg.trainer,
                  cfg.domain, derive_seed(seed, {kTagTrainer}));
  const auto ckpt_iters = checkpoint_iterations(cfg.iterations, cfg.dataset_checkpoints);
  std::size_t next_ckpt = 0;
  for (std::size_t i = 1; i <= cfg.iterations; ++i) {
    const IterationStats stats = trainer.iterate();
    result.history.push_back(stats);
    if (on_iteration) on_iteration(stats);
    while (next_ckpt < ckpt_iters.size() && ckpt_iters[next_ckpt] == i) {
      const auto id = static_cast<std::uint32_t>(next_ckpt + 1);
      auto batch = collect_dataset(trainer.params(), cfg.domain, cfg.trajectories_per_checkpoint, id, seed);
      result.dataset.insert(result.dataset.end(), std::make_move_iterator(batch.begin()),
                            std::make_move_iterator(batch.end()));
      ++next_ckpt;
    }
    if (encoder && i > cfg.encoder_start && !result.dataset.empty()) encoder(i, result.dataset);
  }
  result.policy = trainer.params();
  return result;
}

EvalMetrics evaluate(const ParamSet& params, const terrasim::EnvParams& env,
                     std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("evaluate needs at least one episode");
  terrasim::validate(env);
  struct Episode {
    double reward = 0.0, velocity = 0.0, distance = 0.0;
  };
  std::vector<Episode> eps(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) {
    Env e(env, seeds[i]);
    const auto res = run_policy(params, e, nullptr);
    double r = 0.0, v = 0.0;
    for (std::size_t t = 0; t < res.rewards.size(); ++t) {
      r += res.rewards[t];
      v += t + 1 < res.privileged.size() ? res.privileged[t + 1][terrasim::kPrivDim - 1] : e.state().v;
    }
    const auto n = static_cast<double>(res.rewards.size());
    eps[i] = {r / n, v / n, e.state().x};
  });
  EvalMetrics m;
  for (const auto& e : eps) {
    m.mean_reward += e.reward;
    m.mean_velocity += e.velocity;
    m.distance += e.distance;
  }
  const auto n = static_cast<double>(eps.size());
  m.mean_reward /= n;
  m.mean_velocity /= n;
  m.distance /= n;
  m.episodes = eps.size();
  return m;
}

EvalMetrics evaluate(const ParamSet& params, const terrasim::EnvParams& env, std::size_t episodes,
                     std::uint64_t base_seed) {
  std::vector<std::uint64_t> seeds(episodes);
  for (std::size_t i = 0; i < episodes; ++i) seeds[i] = derive_seed(base_seed, {i});
  return evaluate(params, env, seeds);
}

void save_policy(const std::filesystem::path& path, const PolicyCheckpoint& ckpt) {
  ParamSet out = ckpt.params;
  out.add("meta.iteration", numgrad::Tensor({1}, static_cast<double>(ckpt.iteration)));
  out.add("meta.config_hash", numgrad::Tensor({2}, std::vector<double>{
                                                       static_cast<double>(ckpt.config_hash >> 32),
                                                       static_cast<double>(ckpt.config_hash & 0xffffffffULL)}));
  numgrad::save_weights(out, path);
}

PolicyCheckpoint load_policy(const std::filesystem::path& path) {
  const ParamSet all = numgrad::load_weights(path);
  if (!all.contains("meta.iteration") || !all.contains("meta.config_hash") || !all.contains("log_std")) {
    throw FormatError(FormatErrorKind::kMalformed, path.string() + " is not a policy checkpoint");
  }
  PolicyCheckpoint ckpt;
  for (const auto& e : all) {
    if (e.name.rfind("meta.", 0) != 0) ckpt.params.add(e.name, e.value);
  }
  ckpt.iteration = static_cast<std::uint64_t>(all.at("meta.iteration")[0]);
  const auto& h = all.at("meta.config_hash");
  ckpt.config_hash = (static_cast<std::uint64_t>(h[0]) << 32) | static_cast<std::uint64_t>(h[1]);
  return ckpt;
}

}  // namespace loopsr::ppo

#include "loopsr/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "loopsr/common/error.hpp"
#include "loopsr/common/jsonl.hpp"
#include "loopsr/common/parallel.hpp"
#include "loopsr/numgrad/checkpoint.hpp"

namespace loopsr::cli {

using nlohmann::json;
using terrasim::RobotParams;
using terrasim::Terrain;
using terrasim::TrajectoryRecord;

namespace {

constexpr std::uint64_t kTagCodec = 51;
constexpr std::uint64_t kTagLoop = 52;
constexpr std::uint64_t kTagOrigin = 53;
constexpr std::uint64_t kTagExpert = 54;
constexpr std::uint64_t kTagSplit = 55;
constexpr std::uint64_t kTagVariant = 56;
constexpr std::uint64_t kTagScenario = 57;
constexpr std::uint64_t kTagDeploy = 58;

json losses_json(const trajcodec::LossBreakdown& l) {
  return {{"total", l.total}, {"recon", l.recon}, {"contrastive", l.contrastive},
          {"terrain", l.terrain}, {"robot", l.robot}, {"kl", l.kl},
          {"no_positive_batches", l.no_positive_batches}};
}

void make_layout(const RunPaths& p) {
  for (const char* d : {"checkpoints", "dataset", "store", "metrics"}) fs::create_directories(p.root / d);
}

void require(const fs::path& p) {
  if (!fs::exists(p)) throw MissingArtifactError(p.string());
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw FormatError(FormatErrorKind::kIo, "write failed: " + path.string());
}

std::size_t argmax(const terrasim::TerrainDist& p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

// Accumulates sums; finish() turns the error sums into means.
void add_estimate(IdentificationScore& s, const latentstore::ParamEstimate& est, Terrain truth,
                  const RobotParams& robot, const RobotParams& half) {
  const auto t = static_cast<std::size_t>(truth);
  ++s.total[t];
  if (argmax(est.c_e) == t) ++s.correct[t];
  s.friction_error += std::abs(est.c_r.friction - robot.friction) / half.friction;
  s.mass_error += std::abs(est.c_r.mass - robot.mass) / half.mass;
  ++s.count;
}

void finish(IdentificationScore& s) {
  if (s.count == 0) return;
  s.friction_error /= static_cast<double>(s.count);
  s.mass_error /= static_cast<double>(s.count);
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

trajcodec::CodecTrainConfig variant_config(const RunConfig& cfg, std::size_t v) {
  auto c = cfg.codec.train;
  if (v == 1) c.weights.contrastive = 0.0;
  if (v == 2) c.weights.recon = 0.0;
  return c;
}

}  // namespace

double IdentificationScore::accuracy() const {
  return ratio(std::accumulate(correct.begin(), correct.end(), std::size_t{0}),
               std::accumulate(total.begin(), total.end(), std::size_t{0}));
}

double IdentificationScore::knn_accuracy() const {
  return ratio(std::accumulate(knn_correct.begin(), knn_correct.end(), std::size_t{0}),
               std::accumulate(total.begin(), total.end(), std::size_t{0}));
}

double IdentificationScore::terrain_accuracy(Terrain t) const {
  const auto i = static_cast<std::size_t>(t);
  return ratio(correct[i], total[i]);
}

double IdentificationScore::slope_accuracy() const {
  const auto up = static_cast<std::size_t>(Terrain::kSlopeUp);
  const auto down = static_cast<std::size_t>(Terrain::kSlopeDown);
  return ratio(correct[up] + correct[down], total[up] + total[down]);
}

double IdentificationScore::stair_accuracy() const { return terrain_accuracy(Terrain::kStairs); }

double IdentificationScore::plain_accuracy() const { return terrain_accuracy(Terrain::kFlat); }

PretrainArtifacts cmd_pretrain(const RunConfig& cfg, const fs::path& run) {
  cfg.validate();
  const RunPaths paths{run};
  make_layout(paths);
  write_config(paths.config(), cfg);
  io::JsonlWriter ppo_log(paths.metrics("pretrain.jsonl"));
  io::JsonlWriter codec_log(paths.metrics("codec.jsonl"));

  trajcodec::CodecTrainer coder(cfg.codec.train, derive_seed(cfg.seed, {kTagCodec}));
  auto on_iteration = [&](const ppo::IterationStats& s) {
    ppo_log.write({{"iteration", s.iteration},
                   {"mean_reward", s.mean_reward},
                   {"env_steps", s.env_steps},
                   {"policy_loss", s.ppo.policy_loss},
                   {"value_loss", s.ppo.value_loss},
                   {"entropy", s.ppo.entropy},
                   {"clip_fraction", s.ppo.clip_fraction},
                   {"approx_kl", s.ppo.approx_kl}});
    if (s.iteration % 100 == 0) {
      spdlog::info("pretrain iteration {} mean reward {:.4f}", s.iteration, s.mean_reward);
    }
  };
  auto on_encoder = [&](std::size_t iteration, std::span<const TrajectoryRecord> data) {
    if (data.size() < 2 || cfg.codec.steps_per_iteration == 0) return;
    trajcodec::LossBreakdown mean;
    for (std::size_t k = 0; k < cfg.codec.steps_per_iteration; ++k) mean.accumulate(coder.step(data));
    mean.scale(1.0 / static_cast<double>(cfg.codec.steps_per_iteration));
    codec_log.write({{"phase", "cosched"}, {"iteration", iteration}, {"loss", losses_json(mean)}});
  };
  auto pre = ppo::pretrain(cfg.pretrain, cfg.seed, on_encoder, on_iteration);
  spdlog::info("pretrain done: {} trajectories, {} codec steps", pre.dataset.size(), coder.steps_taken());

  trajcodec::train_epochs(coder, pre.dataset, cfg.codec.epochs, [&](const trajcodec::EpochRecord& r) {
    codec_log.write({{"phase", "offline"}, {"epoch", r.epoch}, {"steps", r.steps}, {"loss", losses_json(r.mean)}});
    spdlog::info("codec epoch {} loss {:.4f}", r.epoch, r.mean.total);
  });

  PretrainArtifacts art;
  art.policy = std::move(pre.policy);
  art.dataset = std::move(pre.dataset);
  art.codec = coder.codec();
  art.store = latentstore::build_reference(art.dataset, art.codec, cfg.codec.store_smoothing);

  ppo::save_policy(paths.policy(), {art.policy, cfg.pretrain.iterations, config_hash(cfg)});
  trajcodec::save_codec(paths.codec(), art.codec);
  terrasim::save_trajectories(paths.dataset(), art.dataset);
  latentstore::save_store(paths.store(), art.store);
  return art;
}

PretrainArtifacts load_artifacts(const RunPaths& paths) {
  for (const auto& p : {paths.policy(), paths.dataset(), paths.codec(), paths.store()}) require(p);
  PretrainArtifacts art;
  art.policy = ppo::load_policy(paths.policy()).params;
  art.dataset = terrasim::load_trajectories(paths.dataset());
  art.codec = trajcodec::load_codec(paths.codec());
  art.store = latentstore::load_store(paths.store());
  return art;
}

AdaptSummary run_adaptation(const RunConfig& cfg, const PretrainArtifacts& art) {
  cfg.validate();
  loopctl::SimulatedTarget target(cfg.test_env, cfg.labels);
  const auto identify = loopctl::codec_identifier(art.codec, art.store, cfg.loop.neighbors, cfg.loop.alpha);

  AdaptSummary s;
  s.terrain = cfg.test_env.terrain;
  s.difficulty = cfg.test_env.difficulty;
  auto loop = loopctl::adaptation_loop(cfg.loop, art.policy, identify, target, derive_seed(cfg.seed, {kTagLoop}),
                                       [](const loopctl::LoopRecord& r) {
                                         spdlog::info("loop {} target reward {:.4f}", r.loop, r.eval.mean_reward);
                                       });
  s.adapted = std::move(loop.policy);
  s.records = std::move(loop.records);

  const std::size_t budget = cfg.loop.loops * cfg.loop.iterations_per_episode;
  ppo::TrainingDomain origin_domain;
  origin_domain.dr_range = cfg.pretrain.domain.dr_range;
  const auto origin =
      loopctl::continue_training(art.policy, cfg.loop.trainer, origin_domain, budget, derive_seed(cfg.seed, {kTagOrigin}));

  ppo::TrainingDomain expert_domain;
  expert_domain.terrain = terrasim::one_hot(cfg.test_env.terrain);
  expert_domain.difficulties = {cfg.test_env.difficulty};
  expert_domain.robot = cfg.test_env.robot;
  expert_domain.dr_range = RobotParams{0.0, 0.0, 0.0, 0.0};
  const auto expert =
      loopctl::continue_training(art.policy, cfg.loop.trainer, expert_domain, budget, derive_seed(cfg.seed, {kTagExpert}));

  s.origin_reward = target.evaluate(origin, cfg.eval.episodes, cfg.eval.seed).mean_reward;
  s.adapted_reward = target.evaluate(s.adapted, cfg.eval.episodes, cfg.eval.seed).mean_reward;
  s.expert_reward = target.evaluate(expert, cfg.eval.episodes, cfg.eval.seed).mean_reward;
  spdlog::info("target rewards: origin {:.4f} adapted {:.4f} expert {:.4f}", s.origin_reward, s.adapted_reward,
               s.expert_reward);
  return s;
}

AdaptSummary cmd_adapt(const RunConfig& cfg, const fs::path& run) {
  const RunPaths paths{run};
  const auto art = load_artifacts(paths);
  auto s = run_adaptation(cfg, art);
  write_config(paths.root / "adapt_config.json", cfg);
  io::JsonlWriter log(paths.metrics("adapt.jsonl"));
  for (const auto& r : s.records) log.write(loopctl::to_json(r));
  write_text(paths.metrics("adapt_summary.csv"),
             fmt::format("terrain,difficulty,origin_reward,adapted_reward,expert_reward\n{},{},{},{},{}\n",
                         terrasim::terrain_name(s.terrain), s.difficulty, s.origin_reward, s.adapted_reward,
                         s.expert_reward));
  numgrad::save_weights(s.adapted, paths.adapted());
  return s;
}

void cmd_eval(const RunConfig& cfg, const fs::path& run) {
  cfg.validate();
  const RunPaths paths{run};
  require(paths.policy());
  std::vector<std::pair<std::string, numgrad::ParamSet>> policies;
  policies.emplace_back("pretrained", ppo::load_policy(paths.policy()).params);
  if (fs::exists(paths.adapted())) policies.emplace_back("adapted", numgrad::load_weights(paths.adapted()));

  std::string csv = "policy,terrain,difficulty,mean_reward,mean_velocity,distance\n";
  for (const auto& [name, params] : policies) {
    for (std::size_t t = 0; t < terrasim::kTerrainCount; ++t) {
      for (double d : cfg.loop.difficulties) {
        terrasim::EnvParams env;
        env.terrain = terrasim::one_hot(terrasim::terrain_from_index(t));
        env.difficulty = d;
        env.robot = cfg.test_env.robot;
        const auto m = ppo::evaluate(params, env, cfg.eval.episodes, cfg.eval.seed);
        csv += fmt::format("{},{},{},{},{},{}\n", name, terrasim::terrain_name(terrasim::terrain_from_index(t)), d,
                           m.mean_reward, m.mean_velocity, m.distance);
      }
    }
  }
  write_text(paths.metrics("eval.csv"), csv);
}

TheoryOutcome cmd_theory(const RunConfig& cfg, const fs::path& out) {
  cfg.theory.validate();
  fs::create_directories(out);
  TheoryOutcome o;
  o.result = mdpgap::run_sweep(cfg.theory);
  mdpgap::write_sweep_csv(out / "theory.csv", o.result);
  o.identity_ok = o.result.identity_failures.empty();
  const json summary{{"pairs", o.result.rows.size()},
                     {"identity_failures", o.result.identity_failures},
                     {"max_residual", o.result.max_residual},
                     {"fraction_bound_holds", o.result.fraction_bound_holds}};
  write_text(out / "theory_summary.json", summary.dump(2) + "\n");
  if (!o.identity_ok) write_text(out / "failing_pairs.json", mdpgap::failure_dump(cfg.theory, o.result).dump(2) + "\n");
  return o;
}

IdentificationScore score_heldout(const trajcodec::Codec& codec, const latentstore::ReferenceStore& store,
                                  std::span<const TrajectoryRecord> heldout, std::size_t neighbors, double alpha,
                                  const RobotParams& half_width) {
  const trajcodec::Matrix z = trajcodec::encode_records(codec.params, codec.config, heldout);
  std::vector<latentstore::ParamEstimate> est(heldout.size());
  std::vector<std::size_t> knn_terrain(heldout.size());
  parallel_for(heldout.size(), [&](std::size_t i) {
    const std::vector<double> zi(z.row(static_cast<Eigen::Index>(i)).begin(),
                                 z.row(static_cast<Eigen::Index>(i)).end());
    const auto retrieved = latentstore::knn_retrieve(store, zi, neighbors).mean;
    knn_terrain[i] = argmax(retrieved.c_e);
    const auto heads = trajcodec::predict_heads(codec.params, zi);
    est[i] = latentstore::fuse(retrieved, {heads.terrain, heads.robot}, alpha).value;
  });
  IdentificationScore s;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    if (!heldout[i].label) throw ConfigError("held-out scoring needs labeled trajectories");
    add_estimate(s, est[i], heldout[i].label->terrain, heldout[i].label->robot, half_width);
    const auto t = static_cast<std::size_t>(heldout[i].label->terrain);
    if (knn_terrain[i] == t) ++s.knn_correct[t];
  }
  finish(s);
  return s;
}

AblationResult run_ablation(const RunConfig& cfg, const PretrainArtifacts& art,
                            const std::function<void(const json&)>& log) {
  cfg.validate();
  const std::size_t n = art.dataset.size();
  const auto hold = static_cast<std::size_t>(std::llround(cfg.ablation.holdout_fraction * static_cast<double>(n)));
  if (hold == 0 || n - hold < std::max<std::size_t>(cfg.loop.neighbors, 2)) {
    throw ConfigError(fmt::format("dataset of {} trajectories too small for the ablation split", n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(cfg.seed, {kTagSplit}));
  std::shuffle(order.begin(), order.end(), split_rng);
  std::vector<TrajectoryRecord> heldout, train;
  for (std::size_t i = 0; i < n; ++i) (i < hold ? heldout : train).push_back(art.dataset[order[i]]);

  AblationResult out;
  out.train_size = train.size();
  out.holdout_size = heldout.size();
  const RobotParams half = cfg.pretrain.domain.dr_range;

  std::vector<trajcodec::Codec> codecs;
  std::vector<latentstore::ReferenceStore> stores;
  for (std::size_t v = 0; v < 3; ++v) {
    trajcodec::CodecTrainer trainer(variant_config(cfg, v), derive_seed(cfg.seed, {kTagVariant}));
    trajcodec::train_epochs(trainer, train, cfg.codec.epochs, [&](const trajcodec::EpochRecord& r) {
      if (log) log({{"variant", kVariantNames[v]}, {"epoch", r.epoch}, {"steps", r.steps}, {"loss", losses_json(r.mean)}});
      spdlog::info("{} epoch {} loss {:.4f}", kVariantNames[v], r.epoch, r.mean.total);
    });
    codecs.push_back(trainer.codec());
    stores.push_back(latentstore::build_reference(train, codecs.back(), cfg.codec.store_smoothing));
    out.heldout[v] = score_heldout(codecs.back(), stores.back(), heldout, cfg.loop.neighbors, cfg.loop.alpha, half);
    spdlog::info("{} held-out accuracy {:.4f} (kNN {:.4f}) friction {:.4f} mass {:.4f}", kVariantNames[v],
                 out.heldout[v].accuracy(), out.heldout[v].knn_accuracy(), out.heldout[v].friction_error,
                 out.heldout[v].mass_error);
  }

  // Identification loops on fresh scenarios. The deployed policy is the
  // pretrained one throughout, so every variant sees the same batches.
  std::vector<loopctl::TestEnvSpec> scenarios;
  for (std::size_t t = 0; t < terrasim::kTerrainCount; ++t) {
    for (std::size_t di = 0; di < cfg.loop.difficulties.size(); ++di) {
      for (std::size_t k = 0; k < cfg.ablation.robots_per_cell; ++k) {
        Rng rng(derive_seed(cfg.seed, {kTagScenario, t, di, k}));
        std::array<double, terrasim::kRobotDim> r{};
        for (std::size_t c = 0; c < terrasim::kRobotDim; ++c) {
          r[c] = uniform(rng, terrasim::kRobotLower[c], terrasim::kRobotUpper[c]);
        }
        scenarios.push_back({terrasim::terrain_from_index(t), cfg.loop.difficulties[di], RobotParams::from_array(r)});
      }
    }
  }
  std::vector<std::vector<std::vector<TrajectoryRecord>>> batches(scenarios.size());
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    loopctl::SimulatedTarget target(scenarios[s]);
    for (std::size_t l = 0; l < cfg.ablation.loops; ++l) {
      batches[s].push_back(
          target.collect(art.policy, cfg.loop.trajectories_per_batch, derive_seed(cfg.seed, {kTagDeploy, s, l})));
    }
  }
  for (std::size_t v = 0; v < 3; ++v) {
    const auto identify = loopctl::codec_identifier(codecs[v], stores[v], cfg.loop.neighbors, cfg.loop.alpha);
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
      loopctl::CurrentParams soft, hard;
      for (const auto& batch : batches[s]) {
        const auto est = identify(batch).fused.value;
        soft.c_e = loopctl::soft_update(soft.c_e, est.c_e, cfg.loop.tau);
        soft.c_r = est.c_r;
        add_estimate(out.loops[v], {soft.c_e, soft.c_r}, scenarios[s].terrain, scenarios[s].robot, half);
        if (v == 0) {
          hard.c_e = loopctl::soft_update(hard.c_e, est.c_e, 0.0);
          hard.c_r = est.c_r;
          add_estimate(out.loops[3], {hard.c_e, hard.c_r}, scenarios[s].terrain, scenarios[s].robot, half);
        }
      }
    }
  }
  for (auto& s : out.loops) finish(s);
  return out;
}

AblationResult cmd_ablate(const RunConfig& cfg, const fs::path& run) {
  const RunPaths paths{run};
  require(paths.dataset());
  require(paths.policy());
  PretrainArtifacts art;
  art.policy = ppo::load_policy(paths.policy()).params;
  art.dataset = terrasim::load_trajectories(paths.dataset());
  io::JsonlWriter log(paths.metrics("ablation_codec.jsonl"));
  const auto r = run_ablation(cfg, art, [&](const json& j) { log.write(j); });

  auto pct = [](double x) { return fmt::format("{:.2f}", 100.0 * x); };
  std::string table = "row";
  for (const char* name : kVariantNames) table += fmt::format(",{}", name);
  table += "\n";
  const std::array<std::pair<const char*, double (IdentificationScore::*)() const>, 3> acc_rows{
      {{"Slope", &IdentificationScore::slope_accuracy},
       {"Stair", &IdentificationScore::stair_accuracy},
       {"Plain", &IdentificationScore::plain_accuracy}}};
  for (const auto& [row, fn] : acc_rows) {
    table += row;
    for (const auto& s : r.loops) table += "," + pct((s.*fn)());
    table += "\n";
  }
  table += "Friction";
  for (const auto& s : r.loops) table += "," + pct(s.friction_error);
  table += "\nMass";
  for (const auto& s : r.loops) table += "," + pct(s.mass_error);
  table += "\n";
  write_text(paths.metrics("ablation.csv"), table);

  std::string held = "row,LSR,LSR-w/o-con,LSR-w/o-AE\n";
  auto held_row = [&](const std::string& name, auto&& value) {
    held += name;
    for (const auto& s : r.heldout) held += "," + value(s);
    held += "\n";
  };
  for (std::size_t t = 0; t < terrasim::kTerrainCount; ++t) {
    const auto terrain = terrasim::terrain_from_index(t);
    held_row(std::string(terrasim::terrain_name(terrain)),
             [&](const IdentificationScore& s) { return pct(s.terrain_accuracy(terrain)); });
  }
  held_row("Overall", [&](const IdentificationScore& s) { return pct(s.accuracy()); });
  held_row("kNN", [&](const IdentificationScore& s) { return pct(s.knn_accuracy()); });
  held_row("Friction", [&](const IdentificationScore& s) { return pct(s.friction_error); });
  held_row("Mass", [&](const IdentificationScore& s) { return pct(s.mass_error); });
  write_text(paths.metrics("ablation_heldout.csv"), held);
  return r;
}

}  // namespace loopsr::cli

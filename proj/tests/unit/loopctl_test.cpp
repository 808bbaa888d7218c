#include <cmath>

#include <gtest/gtest.h>

#include "loopsr/common/error.hpp"
#include "loopsr/loopctl/loop.hpp"

namespace loopsr::loopctl {
namespace {

using terrasim::Terrain;

TEST(SoftUpdate, FixedPointAndScalarChannel) {
  const TerrainDist c{0.5, 0.5, 0.0, 0.0, 0.0};
  EXPECT_EQ(soft_update(c, c, 0.7), c);
  const TerrainDist est{1.0, 0.0, 0.0, 0.0, 0.0};
  const auto out = soft_update(c, est, 0.7);
  EXPECT_NEAR(out[0], 0.65, 1e-15);
  EXPECT_NEAR(out[1], 0.35, 1e-15);
}

TEST(SoftUpdate, GeometricConvergenceAtRateTau) {
  const double tau = 0.7;
  const TerrainDist target = terrasim::smoothed_one_hot(Terrain::kStairs, 0.05);
  TerrainDist c = terrasim::uniform_terrain();
  std::array<double, 5> d0{};
  for (int i = 0; i < 5; ++i) d0[i] = c[i] - target[i];
  for (int k = 1; k <= 30; ++k) {
    c = soft_update(c, target, tau);
    for (int i = 0; i < 5; ++i) {
      EXPECT_NEAR(c[i] - target[i], std::pow(tau, k) * d0[i], 1e-15) << "k=" << k;
    }
  }
}

TEST(SoftUpdate, StaysOnSimplexAndValidates) {
  Rng rng(3);
  TerrainDist c = terrasim::uniform_terrain();
  for (int k = 0; k < 500; ++k) {
    TerrainDist e{};
    double s = 0.0;
    for (double& v : e) s += (v = uniform(rng, 0.0, 1.0));
    for (double& v : e) v /= s;
    c = soft_update(c, e, uniform(rng, 0.0, 1.0));
    EXPECT_NO_THROW(terrasim::check_simplex(c, 1e-12));
  }
  EXPECT_THROW(soft_update(c, TerrainDist{1, 1, 0, 0, 0}, 0.5), ConfigError);
  EXPECT_THROW(soft_update(c, c, 1.2), ConfigError);
}

TEST(RobotParams, ZeroRangeHalfRangeAndBoundary) {
  const RobotParams est{1.1, 0.5, 0.9, 0.3};
  const auto fixed = apply_robot_params(est, {0, 0, 0, 0});
  EXPECT_EQ(fixed.lower, est);
  EXPECT_EQ(fixed.upper, est);
  ppo::TrainingDomain d;
  d.robot = fixed.centre;
  d.dr_range = {0, 0, 0, 0};
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_EQ(d.make_env(s).robot(), est);

  LoopConfig cfg;
  const auto half = cfg.continual_range().to_array();
  const auto full = cfg.dr_range.to_array();
  for (int k = 0; k < 4; ++k) EXPECT_EQ(half[k], full[k] / 2.0);

  const auto edge = apply_robot_params({1.3, 0.2, 1.0, 0.25}, cfg.continual_range());
  EXPECT_EQ(edge.upper.mass, 1.3);
  EXPECT_NEAR(edge.lower.mass, 1.15, 1e-12);
  EXPECT_EQ(edge.lower.friction, 0.2);
  EXPECT_NEAR(edge.upper.friction, 0.4, 1e-12);
  EXPECT_FALSE(edge.clamped);

  const auto out = apply_robot_params({1.6, 0.6, 1.0, 0.25}, cfg.continual_range());
  EXPECT_TRUE(out.clamped);
  EXPECT_EQ(out.centre.mass, 1.3);
}

LoopConfig tiny_config() {
  LoopConfig c;
  c.loops = 4;
  c.iterations_per_episode = 2;
  c.episodes_per_redeploy = 2;
  c.eval_episodes = 2;
  c.trajectories_per_batch = 3;
  c.trainer.envs = 4;
  c.trainer.steps_per_iteration = 8;
  return c;
}

numgrad::ParamSet tiny_policy() { return ppo::init_actor_critic({}, 5); }

// Reads the labels the harness leaked: exact smoothed one-hot and true robot.
Identifier oracle_identifier() {
  return [](std::span<const terrasim::TrajectoryRecord> batch) {
    Identification id;
    const auto& l = batch.front().label.value();
    id.retrieved = {terrasim::smoothed_one_hot(l.terrain, 0.05), l.robot};
    id.decoded = id.retrieved;
    id.fused = latentstore::fuse(id.retrieved, id.decoded, 0.8);
    id.z.assign(32, 0.0);
    return id;
  };
}

TEST(Loop, OracleIdentifierConvergesGeometrically) {
  const auto cfg = tiny_config();
  SimulatedTarget target({Terrain::kSlopeDown, 0.6, {1.0, 0.5, 1.0, 0.2}}, LabelMode::kTrue);
  const auto res = adaptation_loop(cfg, tiny_policy(), oracle_identifier(), target, 1);
  ASSERT_EQ(res.records.size(), 4u);
  const auto target_ce = terrasim::smoothed_one_hot(Terrain::kSlopeDown, 0.05);
  const auto u = terrasim::uniform_terrain();
  for (std::size_t k = 0; k < 4; ++k) {
    for (int i = 0; i < 5; ++i) {
      EXPECT_NEAR(res.records[k].current.c_e[i] - target_ce[i], std::pow(0.7, k + 1.0) * (u[i] - target_ce[i]), 1e-15);
    }
    EXPECT_EQ(res.records[k].current.c_r, (RobotParams{1.0, 0.5, 1.0, 0.2}));
  }
}

TEST(Loop, ScheduleHonoured) {
  const auto cfg = tiny_config();
  SimulatedTarget target({}, LabelMode::kTrue);
  const auto res = adaptation_loop(cfg, tiny_policy(), oracle_identifier(), target, 2);
  ASSERT_EQ(res.records.size(), cfg.loops);
  const std::vector<std::size_t> versions{0, 1, 1, 2};
  for (std::size_t k = 0; k < cfg.loops; ++k) {
    EXPECT_EQ(res.records[k].loop, k);
    EXPECT_EQ(res.records[k].policy_version, versions[k]);
    EXPECT_EQ(res.records[k].env_steps, (k + 1) * 2 * 4 * 8);
    EXPECT_EQ(res.records[k].eval.episodes, 2u);
  }
}

TEST(Loop, DeploymentRecordsAreLabelFree) {
  SimulatedTarget hidden({});
  for (const auto& r : hidden.collect(tiny_policy(), 3, 4)) EXPECT_FALSE(r.label.has_value());
  SimulatedTarget poisoned({}, LabelMode::kPoisoned);
  for (const auto& r : poisoned.collect(tiny_policy(), 3, 4)) {
    ASSERT_TRUE(r.label.has_value());
    EXPECT_NE(r.label->terrain, Terrain::kStairs);
  }
}

struct CodecFixture {
  trajcodec::Codec codec;
  latentstore::ReferenceStore store;
};

CodecFixture small_codec() {
  trajcodec::EncoderConfig cfg;
  cfg.d_model = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  CodecFixture f{{cfg, trajcodec::init_codec(cfg, 3)}, {}};
  ppo::TrainingDomain domain;
  auto data = ppo::collect_dataset(tiny_policy(), domain, 20, 1, 9);
  f.store = latentstore::build_reference(data, f.codec);
  return f;
}

std::vector<std::string> run_lines(LabelMode mode, std::uint64_t seed) {
  const auto f = small_codec();
  auto cfg = tiny_config();
  cfg.neighbors = 4;
  SimulatedTarget target({}, mode);
  std::vector<std::string> lines;
  adaptation_loop(cfg, tiny_policy(), codec_identifier(f.codec, f.store, cfg.neighbors, cfg.alpha), target, seed,
                  [&](const LoopRecord& r) { lines.push_back(to_json(r).dump()); });
  return lines;
}

TEST(Loop, PoisonedLabelsDoNotChangeResults) {
  const auto clean = run_lines(LabelMode::kHidden, 7);
  const auto poisoned = run_lines(LabelMode::kPoisoned, 7);
  ASSERT_EQ(clean.size(), 4u);
  EXPECT_EQ(clean, poisoned);
}

TEST(Loop, DeterministicGivenSeed) {
  EXPECT_EQ(run_lines(LabelMode::kHidden, 11), run_lines(LabelMode::kHidden, 11));
  EXPECT_NE(run_lines(LabelMode::kHidden, 11), run_lines(LabelMode::kHidden, 12));
}

TEST(Loop, IdentifierOutputsAreValid) {
  const auto f = small_codec();
  SimulatedTarget target({});
  const auto batch = target.collect(tiny_policy(), 5, 3);
  const auto id = codec_identifier(f.codec, f.store, 4, 0.8)(batch);
  double n = 0.0;
  for (double v : id.z) n += v * v;
  EXPECT_NEAR(n, 1.0, 1e-12);
  EXPECT_NO_THROW(terrasim::check_simplex(id.fused.value.c_e, 1e-12));
  EXPECT_TRUE(terrasim::within_global(id.fused.value.c_r));
  for (int k = 0; k < 5; ++k) {
    EXPECT_NEAR(id.fused.value.c_e[k], 0.8 * id.retrieved.c_e[k] + 0.2 * id.decoded.c_e[k], 1e-15);
  }
  EXPECT_THROW(codec_identifier(f.codec, f.store, 0, 0.8), ConfigError);
  EXPECT_THROW(codec_identifier(f.codec, f.store, 21, 0.8), ConfigError);
}

TEST(Loop, ConfigValidation) {
  LoopConfig c;
  EXPECT_NO_THROW(c.validate());
  c.tau = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.difficulties = {0.5};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.episodes_per_redeploy = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace loopsr::loopctl

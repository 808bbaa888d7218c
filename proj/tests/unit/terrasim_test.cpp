#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "loopsr/common/error.hpp"
#include "loopsr/terrasim/env.hpp"
#include "loopsr/terrasim/trajectory.hpp"

namespace loopsr::terrasim {
namespace {

RobotParams robot(double m, double mu, double k, double e) { return {m, mu, k, e}; }

EnvParams fixed_params(Terrain t, double d, const RobotParams& r) {
  EnvParams p;
  p.terrain = one_hot(t);
  p.difficulty = d;
  p.robot = r;
  return p;
}

Policy constant(double u) {
  return [u](const Observation&) { return u; };
}

TEST(MakeEnv, OneHotTerrainIsAlwaysRealized) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Env env(fixed_params(Terrain::kStairs, 0.6, robot_midpoint()), seed);
    EXPECT_EQ(env.terrain(), Terrain::kStairs);
  }
}

TEST(MakeEnv, ZeroRangeGivesExactParams) {
  const RobotParams r = robot(0.8, 0.3, 1.2, 0.1);
  Env env(fixed_params(Terrain::kFlat, 0.3, r), 9);
  EXPECT_EQ(env.robot(), r);
}

TEST(MakeEnv, SameSeedSameInstance) {
  EnvParams p;
  p.dr_range = robot_full_range();
  Env a(p, 42), b(p, 42);
  EXPECT_EQ(a.terrain(), b.terrain());
  EXPECT_EQ(a.robot(), b.robot());
  EXPECT_EQ(a.field_seed(), b.field_seed());
  EXPECT_EQ(a.observation(), b.observation());
}

TEST(MakeEnv, SampledParamsStayInsideClampedRange) {
  EnvParams p;
  p.robot = robot(1.3, 0.2, 0.7, 0.5);
  p.dr_range = robot(0.2, 0.1, 0.1, 0.1);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto r = Env(p, seed).robot();
    EXPECT_GE(r.mass, 1.1);
    EXPECT_LE(r.mass, 1.3);
    EXPECT_GE(r.friction, 0.2);
    EXPECT_LE(r.friction, 0.3);
    EXPECT_GE(r.motor, 0.7);
    EXPECT_LE(r.motor, 0.8);
    EXPECT_GE(r.restitution, 0.4);
    EXPECT_LE(r.restitution, 0.5);
  }
}

TEST(MakeEnv, TerrainFrequenciesFollowDistribution) {
  EnvParams p;
  p.terrain = {0.5, 0.0, 0.25, 0.25, 0.0};
  std::vector<int> counts(kTerrainCount, 0);
  const int trials = 8000;
  for (int s = 0; s < trials; ++s) ++counts[static_cast<std::size_t>(Env(p, s).terrain())];
  EXPECT_EQ(counts[1], 0);
  EXPECT_EQ(counts[4], 0);
  EXPECT_NEAR(counts[0] / double(trials), 0.5, 0.02);
  EXPECT_NEAR(counts[2] / double(trials), 0.25, 0.02);
}

TEST(MakeEnv, InvalidParamsRejected) {
  EnvParams p;
  p.terrain = {0.5, 0.5, 0.5, 0.0, 0.0};
  EXPECT_THROW(Env(p, 0), ConfigError);
  p = EnvParams{};
  p.terrain = {1.2, -0.2, 0.0, 0.0, 0.0};
  EXPECT_THROW(Env(p, 0), ConfigError);
  p = EnvParams{};
  p.difficulty = 0.5;
  EXPECT_THROW(Env(p, 0), ConfigError);
  p = EnvParams{};
  p.robot.mass = 2.0;
  EXPECT_THROW(Env(p, 0), ConfigError);
  p = EnvParams{};
  p.dr_range.friction = -0.1;
  EXPECT_THROW(Env(p, 0), ConfigError);
}

TEST(SlopeAt, Definitions) {
  for (double x : {-3.0, 0.0, 0.17, 12.5}) {
    EXPECT_EQ(slope_at(Terrain::kFlat, 0.9, x, 1), 0.0);
    EXPECT_EQ(slope_at(Terrain::kStairs, 0.9, x, 1), 0.0);
    EXPECT_DOUBLE_EQ(slope_at(Terrain::kSlopeUp, 0.6, x, 1), 0.24);
    EXPECT_DOUBLE_EQ(slope_at(Terrain::kSlopeDown, 0.6, x, 1), -0.24);
  }
}

TEST(SlopeAt, RoughIsDeterministicPiecewiseAndBounded) {
  for (double x = -2.0; x < 2.0; x += 0.013) {
    const double s = slope_at(Terrain::kRough, 0.6, x, 77);
    EXPECT_EQ(s, slope_at(Terrain::kRough, 0.6, x, 77));
    EXPECT_LE(std::abs(s), 0.3 * 0.6 + 1e-15);
    const double cell_start = std::floor(x / kRoughCell) * kRoughCell;
    EXPECT_EQ(s, slope_at(Terrain::kRough, 0.6, cell_start + 1e-9, 77));
  }
  bool differs = false;
  for (int k = 0; k < 20; ++k) differs |= rough_height(1, k) != rough_height(2, k);
  EXPECT_TRUE(differs);
}

TEST(Step, RestingOnFlatGround) {
  Env env = Env::fixed(Terrain::kFlat, 0.3, robot(1.0, 0.5, 1.0, 0.2), 3);
  const StepResult s = env.step(0.0);
  EXPECT_EQ(env.state().v, 0.0);
  EXPECT_EQ(env.state().x, 0.0);
  EXPECT_NEAR(s.reward, 0.01832, 1e-5);
  EXPECT_DOUBLE_EQ(s.reward, std::exp(-4.0));
}

TEST(Step, TargetVelocityWithoutFrictionEarnsFullReward) {
  Env env = Env::fixed(Terrain::kFlat, 0.3, robot(1.0, 0.0, 1.0, 0.2), 3, 1.0);
  const StepResult s = env.step(0.0);
  EXPECT_EQ(env.state().v, 1.0);
  EXPECT_EQ(s.reward, 1.0);
}

TEST(Step, StairEdgeImpulse) {
  // restitution 0.5, d = 0.6: velocity scaled by 1 - 0.5 * 0.6 * 0.5 = 0.85
  Env env = Env::fixed(Terrain::kStairs, 0.6, robot(1.0, 0.0, 1.0, 0.5), 5);
  int contacts = 0;
  for (std::size_t t = 0; t < kEpisodeSteps; ++t) {
    const double x = env.state().x;
    const double v0 = env.state().v;
    const StepResult s = env.step(1.0);
    const double v_free = v0 + kDt * kForceMax;
    const bool crossed = std::floor((x + kDt * v_free) / kStairSpacing) > std::floor(x / kStairSpacing);
    EXPECT_EQ(s.obs[3] == 1.0, crossed);
    if (crossed) {
      ++contacts;
      EXPECT_NEAR(env.state().v, 0.85 * v_free, 1e-12);
    } else {
      EXPECT_NEAR(env.state().v, v_free, 1e-12);
    }
  }
  EXPECT_GT(contacts, 3);
}

TEST(Step, ContactOnlyOnStairs) {
  for (Terrain t : {Terrain::kFlat, Terrain::kSlopeUp, Terrain::kSlopeDown, Terrain::kRough}) {
    Env env = Env::fixed(t, 0.9, robot_midpoint(), 1);
    auto res = rollout(env, constant(1.0));
    for (std::size_t i = 0; i <= res.record.n; ++i) EXPECT_EQ(res.record.obs(i)[3], 0.0);
  }
}

TEST(Step, AfterDoneIsUsageError) {
  Env env = Env::fixed(Terrain::kFlat, 0.3, robot_midpoint(), 0);
  for (std::size_t t = 0; t + 1 < kEpisodeSteps; ++t) EXPECT_FALSE(env.step(0.1).done);
  EXPECT_TRUE(env.step(0.1).done);
  EXPECT_THROW(env.step(0.1), UsageError);
}

TEST(Step, RejectsUnphysicalProbe) {
  EXPECT_THROW(Env::fixed(Terrain::kFlat, 0.3, robot(0.0, 0.5, 1.0, 0.2), 0), ConfigError);
  EXPECT_THROW(Env::fixed(Terrain::kFlat, 1.5, robot_midpoint(), 0), ConfigError);
}

TEST(Step, ActionIsClampedAndObservationNoiseIsSmall) {
  Env env = Env::fixed(Terrain::kFlat, 0.3, robot_midpoint(), 8);
  double sq = 0.0;
  for (int i = 0; i < 100; ++i) {
    const StepResult s = env.step(3.0);
    EXPECT_EQ(env.state().u_prev, 1.0);
    EXPECT_EQ(s.obs[2], 1.0);
    sq += (s.obs[0] - env.state().v) * (s.obs[0] - env.state().v);
  }
  EXPECT_NEAR(std::sqrt(sq / 100), kObsNoise, 0.004);
  EXPECT_THROW(env.step(std::nan("")), NumericalError);
}

TEST(Step, PrivilegedLayout) {
  Env env = Env::fixed(Terrain::kSlopeDown, 0.6, robot(1.3, 0.2, 1.0, 0.25), 2);
  env.step(0.4);
  const PrivilegedState p = env.privileged();
  for (std::size_t i = 0; i < kObsDim; ++i) EXPECT_EQ(p[i], env.observation()[i]);
  double hot = 0.0;
  for (std::size_t i = 0; i < kTerrainCount; ++i) hot += p[kObsDim + i];
  EXPECT_EQ(hot, 1.0);
  EXPECT_EQ(p[kObsDim + 2], 1.0);
  EXPECT_DOUBLE_EQ(p[9], -0.24);
  EXPECT_DOUBLE_EQ(p[10], 1.0);
  EXPECT_DOUBLE_EQ(p[11], -1.0);
  EXPECT_DOUBLE_EQ(p[12], 0.0);
  EXPECT_DOUBLE_EQ(p[13], 0.0);
  EXPECT_EQ(p[14], env.state().v);
}

TEST(Rollout, RecordAlignmentAndLength) {
  Env env(EnvParams{}, 11);
  auto res = rollout(env, constant(0.5), {kEpisodeSteps, true, 7});
  const auto& rec = res.record;
  EXPECT_EQ(rec.n, 200u);
  EXPECT_EQ(res.rewards.size(), 200u);
  EXPECT_EQ(res.privileged.size(), 200u);
  for (std::size_t t = 0; t + 1 < rec.n; ++t) {
    const auto third = rec.next_obs(t);
    const auto first = rec.obs(t + 1);
    EXPECT_TRUE(std::equal(third.begin(), third.end(), first.begin()));
    EXPECT_EQ(rec.action(t)[0], 0.5);
  }
  ASSERT_TRUE(rec.label.has_value());
  EXPECT_EQ(rec.label->checkpoint_id, 7u);
  EXPECT_EQ(rec.label->terrain, env.terrain());
  EXPECT_EQ(rec.label->robot, env.robot());
}

TEST(Rollout, UnlabeledAndShortRollouts) {
  Env env(EnvParams{}, 11);
  auto res = rollout(env, constant(0.5), {30, false, 0});
  EXPECT_EQ(res.record.n, 30u);
  EXPECT_FALSE(res.record.label.has_value());
  EXPECT_THROW(rollout(env, constant(0.5)), UsageError);
}

TEST(Properties, BitExactDeterminism) {
  EnvParams p;
  p.dr_range = robot_full_range();
  auto policy = [](const Observation& o) { return std::sin(3.0 * o[0]) + 0.3 * o[1]; };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Env a(p, seed), b(p, seed);
    auto ra = rollout(a, policy);
    auto rb = rollout(b, policy);
    EXPECT_EQ(ra.record, rb.record);
    EXPECT_EQ(ra.rewards, rb.rewards);
  }
}

TEST(Properties, FrictionOnlyDissipatesOnFlat) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Env env = Env::fixed(Terrain::kFlat, 0.3, robot(0.7, 1.0, 1.3, 0.0), seed);
    for (int i = 0; i < 30; ++i) env.step(1.0);
    double prev = std::abs(env.state().v);
    while (!env.done()) {
      env.step(0.0);
      EXPECT_LE(std::abs(env.state().v), prev);
      prev = std::abs(env.state().v);
    }
  }
}

TEST(Properties, DistanceMonotoneInMotorStrengthAndFriction) {
  auto final_x = [](double mu, double k, std::uint64_t seed) {
    Env env = Env::fixed(Terrain::kFlat, 0.3, robot(1.0, mu, k, 0.25), seed);
    rollout(env, constant(1.0));
    return env.state().x;
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    double prev = -1e9;
    for (double k = 0.7; k <= 1.3001; k += 0.1) {
      const double x = final_x(0.6, k, seed);
      EXPECT_GE(x, prev);
      prev = x;
    }
    prev = 1e9;
    for (double mu = 0.2; mu <= 1.0001; mu += 0.1) {
      const double x = final_x(mu, 1.0, seed);
      EXPECT_LE(x, prev);
      prev = x;
    }
  }
}

TEST(Properties, TerrainSignaturesAreSeparable) {
  // mean per-step |dv| over 20 episodes per terrain at a fixed policy
  auto policy = [](const Observation& o) { return std::clamp(2.0 * (1.0 - o[0]), -1.0, 1.0); };
  std::vector<double> mean(kTerrainCount), se(kTerrainCount);
  for (std::size_t t = 0; t < kTerrainCount; ++t) {
    std::vector<double> per_episode;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Env env = Env::fixed(terrain_from_index(t), 0.6, robot_midpoint(), seed);
      auto res = rollout(env, policy);
      double acc = 0.0, prev = 0.0;
      for (const auto& p : res.privileged) {
        acc += std::abs(p[14] - prev);
        prev = p[14];
      }
      per_episode.push_back(acc / static_cast<double>(res.privileged.size()));
    }
    double m = 0.0, v = 0.0;
    for (double e : per_episode) m += e;
    m /= per_episode.size();
    for (double e : per_episode) v += (e - m) * (e - m);
    mean[t] = m;
    se[t] = std::sqrt(v / (per_episode.size() - 1) / per_episode.size());
  }
  for (std::size_t i = 0; i < kTerrainCount; ++i) {
    for (std::size_t j = i + 1; j < kTerrainCount; ++j) {
      EXPECT_GT(std::abs(mean[i] - mean[j]), 3.0 * (se[i] + se[j]) + 1e-6)
          << terrain_name(terrain_from_index(i)) << " vs " << terrain_name(terrain_from_index(j));
    }
  }
}

TEST(TrajectoryFile, RoundTripIsBitExact) {
  std::vector<TrajectoryRecord> recs;
  EnvParams p;
  p.dr_range = robot_full_range();
  for (std::uint64_t s = 0; s < 6; ++s) {
    Env env(p, s);
    recs.push_back(rollout(env, constant(0.3 * s - 0.5), {20 + s, s % 2 == 0, static_cast<std::uint32_t>(s)}).record);
  }
  const auto path = std::filesystem::temp_directory_path() / "loopsr_traj_test.lsrt";
  save_trajectories(path, recs);
  EXPECT_EQ(load_trajectories(path), recs);
  std::filesystem::remove(path);
}

TEST(TrajectoryFile, CorruptHeadersRaiseDistinctErrors) {
  Env env(EnvParams{}, 1);
  std::vector<TrajectoryRecord> recs{rollout(env, constant(0.1)).record};
  const auto good = encode_trajectories(recs);
  auto kind_of = [](std::vector<std::uint8_t> bytes) {
    try {
      decode_trajectories(bytes);
    } catch (const FormatError& e) {
      return e.kind();
    }
    return FormatErrorKind::kIo;
  };
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of(bad_magic), FormatErrorKind::kBadMagic);
  auto bad_version = good;
  bad_version[4] = 9;
  EXPECT_EQ(kind_of(bad_version), FormatErrorKind::kBadVersion);
  auto truncated = good;
  truncated.resize(good.size() - 5);
  EXPECT_EQ(kind_of(truncated), FormatErrorKind::kTruncated);
  EXPECT_THROW(load_trajectories("/nonexistent/none.lsrt"), MissingArtifactError);
}

}  // namespace
}  // namespace loopsr::terrasim

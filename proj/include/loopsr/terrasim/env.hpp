#pragma once

#include <cstdint>

#include "loopsr/common/rng.hpp"
#include "loopsr/terrasim/types.hpp"

namespace loopsr::terrasim {

inline constexpr double kDt = 0.02;
inline constexpr double kForceMax = 4.0;
inline constexpr double kGravity = 9.81;
inline constexpr double kStairSpacing = 0.3;
inline constexpr double kRoughCell = 0.2;
inline constexpr double kObsNoise = 0.01;
inline constexpr double kTargetVelocity = 1.0;

// Deterministic value in [-1, 1] for rough-terrain cell k.
double rough_height(std::uint64_t field_seed, std::int64_t cell);

// Grade of the ground under x. Stairs are flat between edges; their edges act
// as velocity impulses inside Env::step.
double slope_at(Terrain terrain, double difficulty, double x, std::uint64_t field_seed);

double reward(double v, double u);

struct EnvState {
  double x = 0.0;
  double v = 0.0;
  double a_prev = 0.0;
  double u_prev = 0.0;
  std::size_t t = 0;
  std::uint64_t seed = 0;
  Terrain terrain = Terrain::kFlat;
  RobotParams robot{};
};

struct StepResult {
  Observation obs{};
  double reward = 0.0;
  bool done = false;
  PrivilegedState privileged{};
};

class Env {
 public:
  // Samples the terrain from params.terrain and robot parameters uniformly in
  // robot +- dr_range (clamped to the global ranges).
  Env(const EnvParams& params, std::uint64_t seed);

  // Builds an instance with fixed realized terrain and robot parameters. Only
  // physical validity is checked, so probes outside the global ranges work.
  static Env fixed(Terrain terrain, double difficulty, const RobotParams& robot,
                   std::uint64_t seed, double initial_velocity = 0.0);

  StepResult step(double u);

  const EnvState& state() const { return state_; }
  const Observation& observation() const { return obs_; }
  PrivilegedState privileged() const;
  bool done() const { return state_.t >= kEpisodeSteps; }
  Terrain terrain() const { return state_.terrain; }
  double difficulty() const { return difficulty_; }
  const RobotParams& robot() const { return state_.robot; }
  std::uint64_t field_seed() const { return field_seed_; }

 private:
  Env(Terrain terrain, double difficulty, const RobotParams& robot, std::uint64_t seed);
  void observe(bool contact);

  EnvState state_;
  double difficulty_;
  std::uint64_t field_seed_;
  Rng noise_;
  Observation obs_{};
  bool contact_ = false;
};

}  // namespace loopsr::terrasim

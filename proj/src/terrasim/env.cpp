#include "loopsr/terrasim/env.hpp"

#include <algorithm>
#include <cmath>

#include "loopsr/common/error.hpp"

namespace loopsr::terrasim {

namespace {

constexpr std::uint64_t kTagTerrain = 1;
constexpr std::uint64_t kTagRobot = 2;
constexpr std::uint64_t kTagNoise = 3;
constexpr std::uint64_t kTagField = 4;

double unit_interval(std::uint64_t bits) {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

Terrain sample_terrain(const TerrainDist& dist, Rng& rng) {
  const double u = unit_interval(rng());
  double acc = 0.0;
  for (std::size_t i = 0; i < kTerrainCount; ++i) {
    acc += dist[i];
    if (u < acc) return static_cast<Terrain>(i);
  }
  // rounding left u above the cumulative sum: take the last supported category
  for (std::size_t i = kTerrainCount; i-- > 0;) {
    if (dist[i] > 0.0) return static_cast<Terrain>(i);
  }
  return Terrain::kFlat;
}

RobotParams sample_robot(const RobotParams& centre, const RobotParams& half, Rng& rng) {
  const auto c = centre.to_array();
  const auto r = half.to_array();
  std::array<double, kRobotDim> out{};
  for (std::size_t i = 0; i < kRobotDim; ++i) {
    const double lo = std::max(c[i] - r[i], kRobotLower[i]);
    const double hi = std::min(c[i] + r[i], kRobotUpper[i]);
    out[i] = lo + (hi - lo) * unit_interval(rng());
  }
  return RobotParams::from_array(out);
}

}  // namespace

double rough_height(std::uint64_t field_seed, std::int64_t cell) {
  const std::uint64_t h = splitmix64(field_seed ^ splitmix64(static_cast<std::uint64_t>(cell)));
  return 2.0 * unit_interval(h) - 1.0;
}

double slope_at(Terrain terrain, double difficulty, double x, std::uint64_t field_seed) {
  switch (terrain) {
    case Terrain::kFlat:
    case Terrain::kStairs:
      return 0.0;
    case Terrain::kSlopeUp:
      return 0.4 * difficulty;
    case Terrain::kSlopeDown:
      return -0.4 * difficulty;
    case Terrain::kRough: {
      const auto cell = static_cast<std::int64_t>(std::floor(x / kRoughCell));
      return 0.3 * difficulty * rough_height(field_seed, cell);
    }
  }
  return 0.0;
}

double reward(double v, double u) {
  const double e = v - kTargetVelocity;
  return std::exp(-e * e / 0.25) - 0.01 * u * u;
}

Env::Env(Terrain terrain, double difficulty, const RobotParams& robot, std::uint64_t seed)
    : difficulty_(difficulty),
      field_seed_(derive_seed(seed, {kTagField})),
      noise_(derive_seed(seed, {kTagNoise})) {
  state_.seed = seed;
  state_.terrain = terrain;
  state_.robot = robot;
  observe(false);
}

Env::Env(const EnvParams& params, std::uint64_t seed)
    : Env(Terrain::kFlat, params.difficulty, params.robot, seed) {
  validate(params);
  Rng terrain_rng(derive_seed(seed, {kTagTerrain}));
  Rng robot_rng(derive_seed(seed, {kTagRobot}));
  state_.terrain = sample_terrain(params.terrain, terrain_rng);
  state_.robot = sample_robot(params.robot, params.dr_range, robot_rng);
}

Env Env::fixed(Terrain terrain, double difficulty, const RobotParams& robot, std::uint64_t seed,
               double initial_velocity) {
  if (!(robot.mass > 0.0 && robot.friction >= 0.0 && robot.motor >= 0.0 &&
        robot.restitution >= 0.0 && robot.restitution <= 1.0)) {
    throw ConfigError("robot parameters are not physical");
  }
  if (!(difficulty >= 0.0 && difficulty <= 1.0)) throw ConfigError("difficulty outside [0, 1]");
  if (!std::isfinite(initial_velocity)) throw ConfigError("initial velocity is not finite");
  Env env(terrain, difficulty, robot, seed);
  env.state_.v = initial_velocity;
  env.observe(false);
  return env;
}

StepResult Env::step(double u) {
  if (done()) throw UsageError("step called on a finished episode");
  if (!std::isfinite(u)) throw NumericalError("step", "action is not finite");
  u = std::clamp(u, -1.0, 1.0);
  const RobotParams& p = state_.robot;
  const double slope = slope_at(state_.terrain, difficulty_, state_.x, field_seed_);
  const double a = (kForceMax * p.motor * u - p.friction * state_.v - p.mass * kGravity * slope) / p.mass;
  double v = state_.v + kDt * a;
  const double x_next = state_.x + kDt * v;
  bool contact = false;
  if (state_.terrain == Terrain::kStairs &&
      std::floor(x_next / kStairSpacing) > std::floor(state_.x / kStairSpacing)) {
    v *= 1.0 - 0.5 * difficulty_ * (1.0 - p.restitution);
    contact = true;
  }
  state_.x = x_next;
  state_.v = v;
  state_.a_prev = a;
  state_.u_prev = u;
  ++state_.t;
  observe(contact);
  StepResult out;
  out.obs = obs_;
  out.reward = reward(v, u);
  out.done = done();
  out.privileged = privileged();
  return out;
}

void Env::observe(bool contact) {
  contact_ = contact;
  obs_[0] = state_.v + normal(noise_, 0.0, kObsNoise);
  obs_[1] = state_.a_prev + normal(noise_, 0.0, kObsNoise);
  obs_[2] = state_.u_prev;
  obs_[3] = contact ? 1.0 : 0.0;
}

PrivilegedState Env::privileged() const {
  PrivilegedState s{};
  std::copy(obs_.begin(), obs_.end(), s.begin());
  s[kObsDim + static_cast<std::size_t>(state_.terrain)] = 1.0;
  s[kObsDim + kTerrainCount] = slope_at(state_.terrain, difficulty_, state_.x, field_seed_);
  const auto robot = normalize_robot(state_.robot);
  std::copy(robot.begin(), robot.end(), s.begin() + kObsDim + kTerrainCount + 1);
  s[kPrivDim - 1] = state_.v;
  return s;
}

}  // namespace loopsr::terrasim

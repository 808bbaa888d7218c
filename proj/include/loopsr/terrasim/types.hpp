#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace loopsr::terrasim {

enum class Terrain : std::uint8_t { kFlat = 0, kSlopeUp = 1, kSlopeDown = 2, kStairs = 3, kRough = 4 };

inline constexpr std::size_t kTerrainCount = 5;
inline constexpr std::size_t kObsDim = 4;
inline constexpr std::size_t kActDim = 1;
inline constexpr std::size_t kPrivDim = 15;
inline constexpr std::size_t kRobotDim = 4;
inline constexpr std::size_t kEpisodeSteps = 200;
inline constexpr std::array<double, 3> kDifficulties{0.3, 0.6, 0.9};

std::string_view terrain_name(Terrain t);
// Accepts the names above case-insensitively; throws ConfigError otherwise.
Terrain parse_terrain(std::string_view name);
Terrain terrain_from_index(std::size_t i);

using TerrainDist = std::array<double, kTerrainCount>;
using Observation = std::array<double, kObsDim>;
using PrivilegedState = std::array<double, kPrivDim>;

// Channel order everywhere: mass, friction, motor strength, restitution.
struct RobotParams {
  double mass = 1.0;
  double friction = 0.6;
  double motor = 1.0;
  double restitution = 0.25;

  std::array<double, kRobotDim> to_array() const { return {mass, friction, motor, restitution}; }
  static RobotParams from_array(const std::array<double, kRobotDim>& a) {
    return {a[0], a[1], a[2], a[3]};
  }
  bool operator==(const RobotParams&) const = default;
};

inline constexpr std::array<double, kRobotDim> kRobotLower{0.7, 0.2, 0.7, 0.0};
inline constexpr std::array<double, kRobotDim> kRobotUpper{1.3, 1.0, 1.3, 0.5};
inline constexpr std::array<const char*, kRobotDim> kRobotNames{"mass", "friction", "motor",
                                                                 "restitution"};

// Midpoint of the global ranges and the half-widths that cover them.
RobotParams robot_midpoint();
RobotParams robot_full_range();
RobotParams clamp_to_global(const RobotParams& p);
bool within_global(const RobotParams& p);
// Maps each channel to [-1, 1] over its global range.
std::array<double, kRobotDim> normalize_robot(const RobotParams& p);

TerrainDist uniform_terrain();
TerrainDist one_hot(Terrain t);
// (1 - eps) one-hot + eps/5 everywhere: eps = 0.05 gives [0.96, 0.01, ...].
TerrainDist smoothed_one_hot(Terrain t, double eps);
// Throws ConfigError unless entries are >= 0 and sum to 1 within tol.
void check_simplex(const TerrainDist& p, double tol = 1e-9);

struct EnvParams {
  TerrainDist terrain = uniform_terrain();
  double difficulty = 0.6;
  RobotParams robot = robot_midpoint();
  RobotParams dr_range{0.0, 0.0, 0.0, 0.0};  // per-channel half-widths
};

void validate(const EnvParams& params);
bool is_grid_difficulty(double d);

}  // namespace loopsr::terrasim

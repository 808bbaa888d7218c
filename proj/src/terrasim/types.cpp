#include "loopsr/terrasim/types.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "loopsr/common/error.hpp"

namespace loopsr::terrasim {

namespace {

constexpr std::array<std::string_view, kTerrainCount> kNames{"Flat", "SlopeUp", "SlopeDown",
                                                             "Stairs", "Rough"};

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace

std::string_view terrain_name(Terrain t) { return kNames.at(static_cast<std::size_t>(t)); }

Terrain parse_terrain(std::string_view name) {
  for (std::size_t i = 0; i < kTerrainCount; ++i) {
    if (iequals(name, kNames[i])) return static_cast<Terrain>(i);
  }
  throw ConfigError("unknown terrain '" + std::string(name) +
                    "' (expected Flat, SlopeUp, SlopeDown, Stairs or Rough)");
}

Terrain terrain_from_index(std::size_t i) {
  if (i >= kTerrainCount) throw ConfigError("terrain id " + std::to_string(i) + " out of range");
  return static_cast<Terrain>(i);
}

RobotParams robot_midpoint() {
  std::array<double, kRobotDim> a{};
  for (std::size_t i = 0; i < kRobotDim; ++i) a[i] = 0.5 * (kRobotLower[i] + kRobotUpper[i]);
  return RobotParams::from_array(a);
}

RobotParams robot_full_range() {
  std::array<double, kRobotDim> a{};
  for (std::size_t i = 0; i < kRobotDim; ++i) a[i] = 0.5 * (kRobotUpper[i] - kRobotLower[i]);
  return RobotParams::from_array(a);
}

RobotParams clamp_to_global(const RobotParams& p) {
  auto a = p.to_array();
  for (std::size_t i = 0; i < kRobotDim; ++i) a[i] = std::clamp(a[i], kRobotLower[i], kRobotUpper[i]);
  return RobotParams::from_array(a);
}

bool within_global(const RobotParams& p) {
  const auto a = p.to_array();
  for (std::size_t i = 0; i < kRobotDim; ++i) {
    if (!(a[i] >= kRobotLower[i] && a[i] <= kRobotUpper[i])) return false;
  }
  return true;
}

std::array<double, kRobotDim> normalize_robot(const RobotParams& p) {
  auto a = p.to_array();
  for (std::size_t i = 0; i < kRobotDim; ++i) {
    a[i] = 2.0 * (a[i] - kRobotLower[i]) / (kRobotUpper[i] - kRobotLower[i]) - 1.0;
  }
  return a;
}

TerrainDist uniform_terrain() {
  TerrainDist p;
  p.fill(1.0 / static_cast<double>(kTerrainCount));
  return p;
}

TerrainDist one_hot(Terrain t) {
  TerrainDist p{};
  p[static_cast<std::size_t>(t)] = 1.0;
  return p;
}

TerrainDist smoothed_one_hot(Terrain t, double eps) {
  if (!(eps >= 0.0 && eps <= 1.0)) throw ConfigError("smoothing eps must be in [0, 1]");
  TerrainDist p;
  p.fill(eps / static_cast<double>(kTerrainCount));
  p[static_cast<std::size_t>(t)] += 1.0 - eps;
  return p;
}

void check_simplex(const TerrainDist& p, double tol) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("terrain distribution has a negative or non-finite entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > tol) {
    throw ConfigError("terrain distribution sums to " + std::to_string(sum) + ", not 1");
  }
}

bool is_grid_difficulty(double d) {
  return std::any_of(kDifficulties.begin(), kDifficulties.end(),
                     [d](double g) { return std::abs(g - d) < 1e-12; });
}

void validate(const EnvParams& params) {
  check_simplex(params.terrain);
  if (!is_grid_difficulty(params.difficulty)) {
    throw ConfigError("difficulty " + std::to_string(params.difficulty) +
                      " not in {0.3, 0.6, 0.9}");
  }
  if (!within_global(params.robot)) throw ConfigError("robot parameters outside global ranges");
  const auto r = params.dr_range.to_array();
  for (std::size_t i = 0; i < kRobotDim; ++i) {
    if (!(r[i] >= 0.0) || r[i] > kRobotUpper[i] - kRobotLower[i]) {
      throw ConfigError(std::string("DR half-width for ") + kRobotNames[i] + " out of range");
    }
  }
}

}  // namespace loopsr::terrasim

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "loopsr/terrasim/env.hpp"
#include "loopsr/terrasim/types.hpp"

namespace loopsr::terrasim {

// Simulator-side ground truth. Deployment records carry none.
struct TrajectoryLabel {
  Terrain terrain = Terrain::kFlat;
  double difficulty = 0.0;
  RobotParams robot{};
  std::uint32_t checkpoint_id = 0;

  bool operator==(const TrajectoryLabel&) const = default;
};

// Reward-free (o_{1:n}, a_{1:n}, o_{2:n+1}). Observations are stored once as
// n + 1 rows, so next_obs(t) and obs(t + 1) are the same row.
struct TrajectoryRecord {
  std::size_t n = 0;
  std::size_t obs_dim = kObsDim;
  std::size_t act_dim = kActDim;
  std::vector<double> observations;  // (n + 1) x obs_dim
  std::vector<double> actions;       // n x act_dim
  std::optional<TrajectoryLabel> label;

  std::span<const double> obs(std::size_t t) const;
  std::span<const double> action(std::size_t t) const;
  std::span<const double> next_obs(std::size_t t) const { return obs(t + 1); }

  // Throws DimensionError when the arrays do not match n and the dims.
  void validate() const;
  bool operator==(const TrajectoryRecord&) const = default;
};

struct RolloutResult {
  TrajectoryRecord record;
  std::vector<double> rewards;
  std::vector<PrivilegedState> privileged;  // state before each action
};

using Policy = std::function<double(const Observation&)>;

struct RolloutOptions {
  std::size_t steps = kEpisodeSteps;
  bool with_label = true;
  std::uint32_t checkpoint_id = 0;
};

// Runs a fresh env for `steps` actions.
RolloutResult rollout(Env& env, const Policy& policy, const RolloutOptions& opts = {});

inline constexpr std::uint32_t kTrajectoryVersion = 1;

std::vector<std::uint8_t> encode_trajectories(std::span<const TrajectoryRecord> records);
std::vector<TrajectoryRecord> decode_trajectories(std::span<const std::uint8_t> bytes);
void save_trajectories(const std::filesystem::path& path, std::span<const TrajectoryRecord> records);
std::vector<TrajectoryRecord> load_trajectories(const std::filesystem::path& path);

}  // namespace loopsr::terrasim

#include "loopsr/terrasim/trajectory.hpp"

#include "loopsr/common/binary_io.hpp"
#include "loopsr/common/error.hpp"

namespace loopsr::terrasim {

namespace {
constexpr std::size_t kMaxDim = 1024;
}

std::span<const double> TrajectoryRecord::obs(std::size_t t) const {
  if (t > n) throw DimensionError("observation index " + std::to_string(t) + " beyond n=" + std::to_string(n));
  return std::span<const double>(observations).subspan(t * obs_dim, obs_dim);
}

std::span<const double> TrajectoryRecord::action(std::size_t t) const {
  if (t >= n) throw DimensionError("action index " + std::to_string(t) + " beyond n=" + std::to_string(n));
  return std::span<const double>(actions).subspan(t * act_dim, act_dim);
}

void TrajectoryRecord::validate() const {
  if (obs_dim == 0 || act_dim == 0) throw DimensionError("trajectory dims must be positive");
  if (observations.size() != (n + 1) * obs_dim || actions.size() != n * act_dim) {
    throw DimensionError("trajectory arrays do not match n=" + std::to_string(n));
  }
}

RolloutResult rollout(Env& env, const Policy& policy, const RolloutOptions& opts) {
  if (env.state().t != 0) throw UsageError("rollout needs a fresh environment");
  if (opts.steps == 0 || opts.steps > kEpisodeSteps) {
    throw ConfigError("rollout length must be in [1, " + std::to_string(kEpisodeSteps) + "]");
  }
  RolloutResult out;
  TrajectoryRecord& rec = out.record;
  rec.n = opts.steps;
  rec.observations.reserve((opts.steps + 1) * kObsDim);
  rec.actions.reserve(opts.steps);
  out.rewards.reserve(opts.steps);
  out.privileged.reserve(opts.steps);

  const Observation& first = env.observation();
  rec.observations.insert(rec.observations.end(), first.begin(), first.end());
  for (std::size_t t = 0; t < opts.steps; ++t) {
    out.privileged.push_back(env.privileged());
    const double u = policy(env.observation());
    const StepResult s = env.step(u);
    rec.actions.push_back(env.state().u_prev);
    rec.observations.insert(rec.observations.end(), s.obs.begin(), s.obs.end());
    out.rewards.push_back(s.reward);
  }
  if (opts.with_label) {
    rec.label = TrajectoryLabel{env.terrain(), env.difficulty(), env.robot(), opts.checkpoint_id};
  }
  return out;
}

std::vector<std::uint8_t> encode_trajectories(std::span<const TrajectoryRecord> records) {
  io::ByteWriter w;
  w.magic("LSRT");
  w.put<std::uint32_t>(kTrajectoryVersion);
  w.put<std::uint64_t>(records.size());
  for (const auto& r : records) {
    r.validate();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.n));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.obs_dim));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(r.act_dim));
    w.put_f64s(r.observations);
    w.put_f64s(r.actions);
    w.put<std::uint8_t>(r.label ? 1 : 0);
    if (r.label) {
      w.put<std::uint8_t>(static_cast<std::uint8_t>(r.label->terrain));
      w.put<double>(r.label->difficulty);
      w.put_f64s(r.label->robot.to_array());
      w.put<std::uint32_t>(r.label->checkpoint_id);
    }
  }
  return w.bytes();
}

std::vector<TrajectoryRecord> decode_trajectories(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("LSRT");
  r.expect_version(kTrajectoryVersion);
  const auto count = r.get<std::uint64_t>();
  // each record needs at least its 13-byte header
  if (count > r.remaining() / 13) throw FormatError(FormatErrorKind::kTruncated, "record count exceeds payload");
  std::vector<TrajectoryRecord> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    TrajectoryRecord rec;
    rec.n = r.get<std::uint32_t>();
    rec.obs_dim = r.get<std::uint32_t>();
    rec.act_dim = r.get<std::uint32_t>();
    if (rec.obs_dim == 0 || rec.act_dim == 0 || rec.obs_dim > kMaxDim || rec.act_dim > kMaxDim) {
      throw FormatError(FormatErrorKind::kMalformed, "record " + std::to_string(i) + " has bad dims");
    }
    const std::size_t payload = ((rec.n + 1) * rec.obs_dim + rec.n * rec.act_dim) * sizeof(double);
    if (payload > r.remaining()) throw FormatError(FormatErrorKind::kTruncated, "record payload cut short");
    rec.observations.resize((rec.n + 1) * rec.obs_dim);
    rec.actions.resize(rec.n * rec.act_dim);
    r.get_f64s(rec.observations);
    r.get_f64s(rec.actions);
    const auto flag = r.get<std::uint8_t>();
    if (flag > 1) throw FormatError(FormatErrorKind::kMalformed, "bad label flag");
    if (flag == 1) {
      TrajectoryLabel label;
      const auto terrain = r.get<std::uint8_t>();
      if (terrain >= kTerrainCount) throw FormatError(FormatErrorKind::kMalformed, "bad terrain id");
      label.terrain = static_cast<Terrain>(terrain);
      label.difficulty = r.get<double>();
      std::array<double, kRobotDim> robot{};
      r.get_f64s(robot);
      label.robot = RobotParams::from_array(robot);
      label.checkpoint_id = r.get<std::uint32_t>();
      rec.label = label;
    }
    out.push_back(std::move(rec));
  }
  r.expect_end();
  return out;
}

void save_trajectories(const std::filesystem::path& path, std::span<const TrajectoryRecord> records) {
  io::write_file(path, encode_trajectories(records));
}

std::vector<TrajectoryRecord> load_trajectories(const std::filesystem::path& path) {
  return decode_trajectories(io::read_file(path));
}

}  // namespace loopsr::terrasim

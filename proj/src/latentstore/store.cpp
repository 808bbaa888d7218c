#include "loopsr/latentstore/store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "loopsr/common/binary_io.hpp"
#include "loopsr/common/error.hpp"

namespace loopsr::latentstore {

namespace {

using terrasim::kRobotDim;
using terrasim::kTerrainCount;

constexpr std::size_t kEntryBytes =
    (kLatentDim + kTerrainCount + kRobotDim) * sizeof(double) + sizeof(std::uint32_t) + 1 + sizeof(double);

void check_entry(const StoreEntry& e, std::size_t i) {
  double sq = 0.0;
  for (double v : e.z) sq += v * v;
  if (!(std::abs(std::sqrt(sq) - 1.0) <= 1e-9)) {
    throw ConfigError("store entry " + std::to_string(i) + " has a non-unit latent");
  }
  terrasim::check_simplex(e.c_e);
  for (double v : e.c_r.to_array()) {
    if (!std::isfinite(v)) throw ConfigError("store entry " + std::to_string(i) + " has non-finite c_r");
  }
}

void check_query(const ReferenceStore& store, std::span<const double> z, std::size_t n) {
  if (store.empty()) throw ConfigError("knn_retrieve: empty reference store");
  if (z.size() != kLatentDim) throw DimensionError("knn_retrieve: query must have 32 components");
  for (double v : z) {
    if (!std::isfinite(v)) throw NumericalError("knn_retrieve", "non-finite query");
  }
  if (n < 1 || n > store.size()) {
    throw ConfigError("knn_retrieve: N=" + std::to_string(n) + " outside [1, " +
                      std::to_string(store.size()) + "]");
  }
}

}  // namespace

ReferenceStore::ReferenceStore(std::vector<StoreEntry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) check_entry(entries_[i], i);
}

ReferenceStore build_reference(std::span<const terrasim::TrajectoryRecord> records,
                               const trajcodec::Codec& codec, double label_smoothing) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].label) throw ConfigError("build_reference: record " + std::to_string(i) + " is unlabeled");
  }
  const trajcodec::Matrix z = trajcodec::encode_records(codec.params, codec.config, records);
  std::vector<StoreEntry> entries(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& label = *records[i].label;
    auto& e = entries[i];
    for (std::size_t c = 0; c < kLatentDim; ++c) e.z[c] = z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
    e.c_e = terrasim::smoothed_one_hot(label.terrain, label_smoothing);
    e.c_r = label.robot;
    e.checkpoint_id = label.checkpoint_id;
    e.terrain = label.terrain;
    e.difficulty = label.difficulty;
  }
  return ReferenceStore(std::move(entries));
}

std::vector<std::size_t> knn_indices(const ReferenceStore& store, std::span<const double> z,
                                     std::size_t n) {
  check_query(store, z, n);
  const auto entries = store.entries();
  std::vector<double> sim(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    sim[i] = std::inner_product(z.begin(), z.end(), entries[i].z.begin(), 0.0);
  }
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](std::size_t a, std::size_t b) { return sim[a] > sim[b] || (sim[a] == sim[b] && a < b); });
  order.resize(n);
  return order;
}

Retrieval knn_retrieve(const ReferenceStore& store, std::span<const double> z, std::size_t n) {
  Retrieval out;
  out.neighbors = knn_indices(store, z, n);
  std::array<double, kRobotDim> cr{};
  for (std::size_t i : out.neighbors) {
    const auto& e = store.at(i);
    for (std::size_t k = 0; k < kTerrainCount; ++k) out.mean.c_e[k] += e.c_e[k];
    const auto r = e.c_r.to_array();
    for (std::size_t k = 0; k < kRobotDim; ++k) cr[k] += r[k];
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : out.mean.c_e) v *= inv;
  for (double& v : cr) v *= inv;
  out.mean.c_r = terrasim::RobotParams::from_array(cr);
  return out;
}

FusedParams fuse(const ParamEstimate& retrieved, const ParamEstimate& decoded, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("fusion ratio alpha must lie in [0, 1]");
  terrasim::check_simplex(retrieved.c_e);
  terrasim::check_simplex(decoded.c_e);
  FusedParams out;
  out.alpha = alpha;
  double sum = 0.0;
  for (std::size_t k = 0; k < kTerrainCount; ++k) {
    out.value.c_e[k] = alpha * retrieved.c_e[k] + (1.0 - alpha) * decoded.c_e[k];
    sum += out.value.c_e[k];
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    for (double& v : out.value.c_e) v /= sum;
    out.renormalized = true;
  }
  const auto a = retrieved.c_r.to_array();
  const auto b = decoded.c_r.to_array();
  std::array<double, kRobotDim> c{};
  for (std::size_t k = 0; k < kRobotDim; ++k) {
    if (!std::isfinite(a[k]) || !std::isfinite(b[k])) throw ConfigError("fuse: non-finite robot parameters");
    c[k] = alpha * a[k] + (1.0 - alpha) * b[k];
  }
  const auto raw = terrasim::RobotParams::from_array(c);
  out.value.c_r = terrasim::clamp_to_global(raw);
  out.clamped = !(out.value.c_r == raw);
  return out;
}

std::vector<std::uint8_t> encode_store(const ReferenceStore& store) {
  io::ByteWriter w;
  w.magic("LSRS");
  w.put<std::uint32_t>(kStoreVersion);
  w.put<std::uint64_t>(store.size());
  for (const auto& e : store.entries()) {
    w.put_f64s(e.z);
    w.put_f64s(e.c_e);
    w.put_f64s(e.c_r.to_array());
    w.put<std::uint32_t>(e.checkpoint_id);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.terrain));
    w.put<double>(e.difficulty);
  }
  return w.bytes();
}

ReferenceStore decode_store(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("LSRS");
  r.expect_version(kStoreVersion);
  const auto count = r.get<std::uint64_t>();
  if (count > r.remaining() / kEntryBytes) throw FormatError(FormatErrorKind::kTruncated, "entry count exceeds payload");
  std::vector<StoreEntry> entries(count);
  for (auto& e : entries) {
    r.get_f64s(e.z);
    r.get_f64s(e.c_e);
    std::array<double, kRobotDim> cr{};
    r.get_f64s(cr);
    e.c_r = terrasim::RobotParams::from_array(cr);
    e.checkpoint_id = r.get<std::uint32_t>();
    const auto t = r.get<std::uint8_t>();
    if (t >= kTerrainCount) throw FormatError(FormatErrorKind::kMalformed, "bad terrain id in store");
    e.terrain = static_cast<terrasim::Terrain>(t);
    e.difficulty = r.get<double>();
  }
  r.expect_end();
  try {
    return ReferenceStore(std::move(entries));
  } catch (const ConfigError& err) {
    throw FormatError(FormatErrorKind::kMalformed, err.what());
  }
}

void save_store(const std::filesystem::path& path, const ReferenceStore& store) {
  io::write_file(path, encode_store(store));
}

ReferenceStore load_store(const std::filesystem::path& path) { return decode_store(io::read_file(path)); }

}  // namespace loopsr::latentstore

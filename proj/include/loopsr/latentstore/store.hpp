#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "loopsr/terrasim/trajectory.hpp"
#include "loopsr/trajcodec/codec.hpp"

namespace loopsr::latentstore {

using trajcodec::kLatentDim;
using Latent = std::array<double, kLatentDim>;

struct StoreEntry {
  Latent z{};
  terrasim::TerrainDist c_e{};
  terrasim::RobotParams c_r{};
  std::uint32_t checkpoint_id = 0;
  terrasim::Terrain terrain = terrasim::Terrain::kFlat;
  double difficulty = 0.0;

  bool operator==(const StoreEntry&) const = default;
};

// Immutable after construction; safe for concurrent readers.
class ReferenceStore {
 public:
  ReferenceStore() = default;
  // Validates every entry: unit z (1e-9), c_e a simplex, c_r finite.
  explicit ReferenceStore(std::vector<StoreEntry> entries);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const StoreEntry& at(std::size_t i) const { return entries_.at(i); }
  std::span<const StoreEntry> entries() const { return entries_; }

  bool operator==(const ReferenceStore&) const = default;

 private:
  std::vector<StoreEntry> entries_;
};

// One entry per record, z from inference-mode encoding, c_e the smoothed
// one-hot of the realized terrain. Raises ConfigError on an unlabeled record.
ReferenceStore build_reference(std::span<const terrasim::TrajectoryRecord> records,
                               const trajcodec::Codec& codec, double label_smoothing = 0.05);

struct ParamEstimate {
  terrasim::TerrainDist c_e{};
  terrasim::RobotParams c_r{};
};

struct Retrieval {
  ParamEstimate mean;
  std::vector<std::size_t> neighbors;  // by decreasing similarity, ties to the lower index
};

// Top-N entries by inner product with z; unweighted mean of their parameters.
std::vector<std::size_t> knn_indices(const ReferenceStore& store, std::span<const double> z,
                                     std::size_t n);
Retrieval knn_retrieve(const ReferenceStore& store, std::span<const double> z, std::size_t n);

struct FusedParams {
  ParamEstimate value;
  double alpha = 0.0;
  bool renormalized = false;  // c_e drifted more than 1e-12 off the simplex
  bool clamped = false;       // c_r left the global ranges
};

// alpha * retrieved + (1 - alpha) * decoded, componentwise.
FusedParams fuse(const ParamEstimate& retrieved, const ParamEstimate& decoded, double alpha);

inline constexpr std::uint32_t kStoreVersion = 1;

std::vector<std::uint8_t> encode_store(const ReferenceStore& store);
ReferenceStore decode_store(std::span<const std::uint8_t> bytes);
void save_store(const std::filesystem::path& path, const ReferenceStore& store);
ReferenceStore load_store(const std::filesystem::path& path);

}  // namespace loopsr::latentstore

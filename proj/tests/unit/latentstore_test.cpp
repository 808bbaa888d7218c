#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "loopsr/common/binary_io.hpp"
#include "loopsr/common/error.hpp"
#include "loopsr/common/rng.hpp"
#include "loopsr/latentstore/store.hpp"
#include "loopsr/terrasim/env.hpp"

namespace loopsr::latentstore {
namespace {

using terrasim::Terrain;

Latent random_unit(Rng& rng) {
  Latent z{};
  double n = 0.0;
  for (double& v : z) {
    v = normal(rng);
    n += v * v;
  }
  n = std::sqrt(n);
  for (double& v : z) v /= n;
  return z;
}

StoreEntry random_entry(Rng& rng) {
  StoreEntry e;
  e.z = random_unit(rng);
  e.terrain = terrasim::terrain_from_index(rng() % 5);
  e.c_e = terrasim::smoothed_one_hot(e.terrain, 0.05);
  std::array<double, 4> r{};
  for (std::size_t k = 0; k < 4; ++k) r[k] = uniform(rng, terrasim::kRobotLower[k], terrasim::kRobotUpper[k]);
  e.c_r = terrasim::RobotParams::from_array(r);
  e.checkpoint_id = static_cast<std::uint32_t>(rng() % 10);
  e.difficulty = terrasim::kDifficulties[rng() % 3];
  return e;
}

ReferenceStore random_store(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<StoreEntry> e;
  for (std::size_t i = 0; i < n; ++i) e.push_back(random_entry(rng));
  return ReferenceStore(std::move(e));
}

// Exhaustive oracle: every similarity, full stable sort.
std::vector<std::size_t> scan(const ReferenceStore& s, const Latent& z, std::size_t n) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < s.size(); ++i) {
    double d = 0.0;
    for (std::size_t c = 0; c < kLatentDim; ++c) d += z[c] * s.at(i).z[c];
    all.emplace_back(-d, i);
  }
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(all[i].second);
  return out;
}

TEST(Knn, MatchesExhaustiveScanOnRandomQueries) {
  const ReferenceStore store = random_store(500, 1);
  const auto before = encode_store(store);
  Rng rng(2);
  for (int q = 0; q < 1000; ++q) {
    const Latent z = random_unit(rng);
    const std::size_t n = 1 + rng() % 40;
    ASSERT_EQ(knn_indices(store, z, n), scan(store, z, n)) << "query " << q;
  }
  EXPECT_EQ(encode_store(store), before);
}

TEST(Knn, TiesResolveToLowerIndex) {
  Rng rng(3);
  std::vector<StoreEntry> e;
  for (int i = 0; i < 6; ++i) e.push_back(random_entry(rng));
  e[4].z = e[1].z;  // exact duplicates
  e[5].z = e[1].z;
  const ReferenceStore store(e);
  EXPECT_EQ(knn_indices(store, e[1].z, 1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(knn_indices(store, e[1].z, 2), (std::vector<std::size_t>{1, 4}));
  EXPECT_EQ(knn_indices(store, e[1].z, 3), (std::vector<std::size_t>{1, 4, 5}));
  // duplicates included in the oracle set too
  const ReferenceStore dup(std::vector<StoreEntry>(300, e[0]));
  Rng q(4);
  for (int i = 0; i < 50; ++i) {
    const Latent z = random_unit(q);
    EXPECT_EQ(knn_indices(dup, z, 7), scan(dup, z, 7));
  }
}

TEST(Knn, SingleEntryReturnsItsParameters) {
  Rng rng(5);
  const StoreEntry only = random_entry(rng);
  const ReferenceStore store({only});
  const auto r = knn_retrieve(store, random_unit(rng), 1);
  EXPECT_EQ(r.mean.c_e, only.c_e);
  EXPECT_EQ(r.mean.c_r, only.c_r);
}

TEST(Knn, MeanOfNeighbourParameters) {
  const ReferenceStore store = random_store(50, 6);
  Rng rng(7);
  const Latent z = random_unit(rng);
  const auto r = knn_retrieve(store, z, 5);
  std::array<double, 5> ce{};
  double mass = 0.0;
  for (std::size_t i : r.neighbors) {
    for (int k = 0; k < 5; ++k) ce[k] += store.at(i).c_e[k] / 5.0;
    mass += store.at(i).c_r.mass / 5.0;
  }
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(r.mean.c_e[k], ce[k], 1e-15);
  EXPECT_NEAR(r.mean.c_r.mass, mass, 1e-15);
}

TEST(Knn, Errors) {
  Rng rng(8);
  const Latent z = random_unit(rng);
  EXPECT_THROW(knn_retrieve(ReferenceStore{}, z, 1), ConfigError);
  const ReferenceStore store = random_store(3, 9);
  EXPECT_THROW(knn_retrieve(store, z, 0), ConfigError);
  EXPECT_THROW(knn_retrieve(store, z, 4), ConfigError);
  std::vector<double> short_z(16, 0.25);
  EXPECT_THROW(knn_retrieve(store, short_z, 1), DimensionError);
}

TEST(Store, RejectsInvalidEntries) {
  Rng rng(10);
  StoreEntry e = random_entry(rng);
  e.z[0] += 0.01;
  EXPECT_THROW(ReferenceStore({e}), ConfigError);
  e = random_entry(rng);
  e.c_e[0] += 0.1;
  EXPECT_THROW(ReferenceStore({e}), ConfigError);
}

TEST(Fuse, FixedPointAndScalarChannel) {
  ParamEstimate c{terrasim::smoothed_one_hot(Terrain::kStairs, 0.05), {1.1, 0.4, 0.9, 0.2}};
  for (double a : {0.0, 0.3, 0.8, 1.0}) {
    const auto f = fuse(c, c, a);
    for (int k = 0; k < 5; ++k) EXPECT_NEAR(f.value.c_e[k], c.c_e[k], 1e-15);
    EXPECT_NEAR(f.value.c_r.friction, c.c_r.friction, 1e-15);
  }
  ParamEstimate retr{terrasim::one_hot(Terrain::kFlat), {1.0, 0.6, 1.0, 0.25}};
  ParamEstimate ml{terrasim::one_hot(Terrain::kRough), {1.0, 0.6, 1.0, 0.25}};
  const auto f = fuse(retr, ml, 0.8);
  EXPECT_EQ(f.value.c_e[0], 0.8);
  EXPECT_NEAR(f.value.c_e[4], 0.2, 1e-15);
  EXPECT_FALSE(f.renormalized);
}

TEST(Fuse, ConvexCombinationAndMonotoneInAlpha) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    ParamEstimate a, b;
    double sa = 0.0, sb = 0.0;
    for (int k = 0; k < 5; ++k) {
      a.c_e[k] = uniform(rng, 0.0, 1.0);
      b.c_e[k] = uniform(rng, 0.0, 1.0);
      sa += a.c_e[k];
      sb += b.c_e[k];
    }
    for (int k = 0; k < 5; ++k) {
      a.c_e[k] /= sa;
      b.c_e[k] /= sb;
    }
    a.c_r = random_entry(rng).c_r;
    b.c_r = random_entry(rng).c_r;
    const double alpha = uniform(rng, 0.0, 1.0);
    const auto f = fuse(a, b, alpha);
    double sum = 0.0;
    for (int k = 0; k < 5; ++k) {
      EXPECT_NEAR(f.value.c_e[k], alpha * a.c_e[k] + (1 - alpha) * b.c_e[k], 1e-15);
      sum += f.value.c_e[k];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_NEAR(f.value.c_r.mass, alpha * a.c_r.mass + (1 - alpha) * b.c_r.mass, 1e-15);
    // linear in alpha: distance to the retrieved value shrinks as (1 - alpha)
    const auto f2 = fuse(a, b, std::min(1.0, alpha + 0.1));
    for (int k = 0; k < 5; ++k) {
      EXPECT_LE(std::abs(f2.value.c_e[k] - a.c_e[k]), std::abs(f.value.c_e[k] - a.c_e[k]) + 1e-15);
    }
  }
}

TEST(Fuse, ClampsAndValidates) {
  ParamEstimate a{terrasim::uniform_terrain(), {1.3, 1.0, 1.3, 0.5}};
  ParamEstimate b{terrasim::uniform_terrain(), {2.0, 1.0, 1.3, 0.5}};
  const auto f = fuse(a, b, 0.5);
  EXPECT_TRUE(f.clamped);
  EXPECT_EQ(f.value.c_r.mass, 1.3);
  ParamEstimate bad = a;
  bad.c_e[0] = 0.9;
  EXPECT_THROW(fuse(bad, b, 0.5), ConfigError);
  EXPECT_THROW(fuse(a, b, 1.5), ConfigError);
}

TEST(Persistence, RoundTripIsBitExact) {
  const ReferenceStore store = random_store(37, 12);
  const auto path = std::filesystem::temp_directory_path() / "loopsr_store_test.lsrs";
  save_store(path, store);
  const ReferenceStore back = load_store(path);
  EXPECT_EQ(back, store);
  EXPECT_EQ(encode_store(back), encode_store(store));
  std::filesystem::remove(path);
}

FormatErrorKind kind_of(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_store(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error";
  return FormatErrorKind::kIo;
}

TEST(Persistence, CorruptionKindsAreDistinct) {
  const auto good = encode_store(random_store(4, 13));
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(kind_of(magic), FormatErrorKind::kBadMagic);
  auto version = good;
  version[4] = 9;
  EXPECT_EQ(kind_of(version), FormatErrorKind::kBadVersion);
  const std::vector<std::uint8_t> cut(good.begin(), good.end() - 5);
  EXPECT_EQ(kind_of(cut), FormatErrorKind::kTruncated);
  auto terrain = good;
  terrain[16 + (32 + 5 + 4) * 8 + 4] = 7;
  EXPECT_EQ(kind_of(terrain), FormatErrorKind::kMalformed);
}

TEST(Build, FromCodecSelfRetrieval) {
  trajcodec::EncoderConfig cfg;
  cfg.d_model = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  const trajcodec::Codec codec{cfg, trajcodec::init_codec(cfg, 1)};
  std::vector<terrasim::TrajectoryRecord> recs;
  for (std::uint64_t s = 0; s < 12; ++s) {
    terrasim::EnvParams p;
    p.dr_range = terrasim::robot_full_range();
    terrasim::Env env(p, s);
    Rng rng(s);
    terrasim::RolloutOptions opts;
    opts.steps = 30;
    opts.checkpoint_id = static_cast<std::uint32_t>(s);
    recs.push_back(terrasim::rollout(env, [&](const auto&) { return uniform(rng, -1.0, 1.0); }, opts).record);
  }
  const ReferenceStore store = build_reference(recs, codec);
  ASSERT_EQ(store.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto z = trajcodec::encode_record(codec.params, cfg, recs[i]);
    const auto r = knn_retrieve(store, z, 1);
    EXPECT_EQ(r.neighbors[0], i);
    EXPECT_EQ(r.mean.c_r, recs[i].label->robot);
    EXPECT_EQ(store.at(i).checkpoint_id, i);
    EXPECT_EQ(store.at(i).terrain, recs[i].label->terrain);
  }
  recs[3].label.reset();
  EXPECT_THROW(build_reference(recs, codec), ConfigError);
}

}  // namespace
}  // namespace loopsr::latentstore

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "loopsr/numgrad/graph.hpp"
#include "loopsr/numgrad/param_set.hpp"
#include "loopsr/terrasim/trajectory.hpp"

namespace loopsr::trajcodec {

using numgrad::Graph;
using numgrad::Matrix;
using numgrad::ParamSet;
using numgrad::Var;

inline constexpr std::size_t kLatentDim = 32;
inline constexpr double kLogSigmaMin = -10.0;
inline constexpr double kLogSigmaMax = 2.0;

struct EncoderConfig {
  std::size_t d_model = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ff_multiplier = 2;
  std::size_t latent_dim = kLatentDim;
  std::size_t max_timesteps = 200;
  // causal look-back in tokens; 0 attends to the whole prefix
  std::size_t attention_window = 96;
  std::size_t decoder_hidden = 64;
  std::size_t head_hidden = 64;

  void validate() const;
};

// One fixed-length window of B trajectories, flattened time-major per
// trajectory: row b * L + t.
struct SequenceBatch {
  std::size_t batch = 0;
  std::size_t steps = 0;
  Matrix obs;   // o_t
  Matrix act;   // a_t
  Matrix next;  // o_{t+1}
  std::vector<std::size_t> positions;  // absolute timestep of each row
};

struct Window {
  std::size_t record = 0;
  std::size_t start = 0;
};

// Reads only observations and actions: labels never reach the encoder.
SequenceBatch make_batch(std::span<const terrasim::TrajectoryRecord> records,
                         std::span<const Window> windows, std::size_t steps);
SequenceBatch full_batch(const terrasim::TrajectoryRecord& record);

ParamSet init_codec(const EncoderConfig& cfg, std::uint64_t seed);

// 3 tokens per timestep (o_t, a_t, o_{t+1}): modality affine embedding plus the
// timestep's position embedding. Rows b * 3L + 3t + j.
Var tokenize(Graph& g, const SequenceBatch& batch, const EncoderConfig& cfg);

struct LatentOut {
  Var mu;         // B x latent, pooled
  Var log_sigma;  // B x latent, pooled, clamped
  Var z;          // B x latent, unit rows
};

enum class EncodeMode { kTrain, kInference };

// Causal transformer; each timestep's latent is read at its o_{t+1} token and
// pooled by averaging. Train mode samples z = mu + sigma * eps with eps drawn
// from `noise` (B x latent).
LatentOut encode(Graph& g, const SequenceBatch& batch, const EncoderConfig& cfg, EncodeMode mode,
                 const Matrix* noise = nullptr);

// Per-timestep (mu | log_sigma) before pooling: (B * L) x 2 latent.
Var timestep_latents(Graph& g, const SequenceBatch& batch, const EncoderConfig& cfg);

// Inference-mode z for one trajectory (unit norm). `prefix_steps` > 0 pools
// only the first timesteps of the full causal pass.
std::vector<double> encode_record(const ParamSet& params, const EncoderConfig& cfg,
                                  const terrasim::TrajectoryRecord& record,
                                  std::size_t prefix_steps = 0);
Matrix encode_records(const ParamSet& params, const EncoderConfig& cfg,
                      std::span<const terrasim::TrajectoryRecord> records);

// Decoder prediction of o_{t+1} from [z; o_t; a_t].
Var decode(Graph& g, Var z, const SequenceBatch& batch);

// sum_t sum_c (o_{t+1} - q(z, o_t, a_t))^2, averaged over the batch.
Var recon_loss(Graph& g, Var z, const SequenceBatch& batch);

struct ContrastiveOut {
  Var loss;
  bool no_positives = false;
  std::size_t anchors = 0;
};

// Supervised InfoNCE over unit rows of Z with inner-product logits / temperature.
ContrastiveOut contrastive_loss(Graph& g, Var z, std::span<const std::uint8_t> labels,
                                double temperature = 1.0);

struct HeadOut {
  Var terrain_prob;  // B x 5, rows on the simplex
  Var robot;         // B x 4, inside the global ranges
};

HeadOut heads(Graph& g, Var z);

struct HeadLosses {
  Var terrain;
  Var robot;
};

// L_e = KL(p_e || c_e) (or KL(c_e || p_e) when reverse_kl), L_r = mean_k
// |p_r - c_r|_k / R_k, both averaged over the batch.
HeadLosses head_losses(Graph& g, const HeadOut& out, const Matrix& c_e, const Matrix& c_r,
                       const terrasim::RobotParams& dr_range, bool reverse_kl = false);

// Tape-free head predictions for unit latents (rows).
struct HeadPrediction {
  terrasim::TerrainDist terrain;
  terrasim::RobotParams robot;
};
HeadPrediction predict_heads(const ParamSet& params, std::span<const double> z);

inline constexpr std::uint32_t kCodecMetaVersion = 1;

struct Codec {
  EncoderConfig config;
  ParamSet params;
};

void save_codec(const std::filesystem::path& path, const Codec& codec);
Codec load_codec(const std::filesystem::path& path);

}  // namespace loopsr::trajcodec

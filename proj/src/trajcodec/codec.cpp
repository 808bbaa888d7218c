#include "loopsr/trajcodec/codec.hpp"

#include <algorithm>
#include <cmath>

#include "loopsr/common/error.hpp"
#include "loopsr/common/parallel.hpp"
#include "loopsr/common/rng.hpp"
#include "loopsr/numgrad/checkpoint.hpp"
#include "loopsr/numgrad/layers.hpp"

namespace loopsr::trajcodec {

namespace {

using terrasim::kActDim;
using terrasim::kObsDim;
using terrasim::kRobotDim;
using terrasim::kTerrainCount;

constexpr std::array<double, kObsDim> kInputScale{1.0, 0.2, 1.0, 1.0};

numgrad::AttentionBlockConfig block_config(const EncoderConfig& cfg) {
  return {cfg.d_model, cfg.heads, cfg.ff_multiplier, true, cfg.attention_window};
}

Matrix scaled_obs(const Matrix& m) {
  Matrix out = m;
  for (std::size_t c = 0; c < kObsDim; ++c) out.col(static_cast<Eigen::Index>(c)) *= kInputScale[c];
  return out;
}

Matrix range_row(bool width) {
  Matrix m(1, kRobotDim);
  for (std::size_t k = 0; k < kRobotDim; ++k) {
    m(0, static_cast<Eigen::Index>(k)) =
        width ? terrasim::kRobotUpper[k] - terrasim::kRobotLower[k] : terrasim::kRobotLower[k];
  }
  return m;
}

}  // namespace

void EncoderConfig::validate() const {
  if (latent_dim != kLatentDim) throw ConfigError("latent dimension is fixed at 32");
  if (d_model == 0 || layers == 0 || heads == 0 || d_model % heads != 0) {
    throw ConfigError("encoder: d_model must be a positive multiple of heads, layers >= 1");
  }
  if (max_timesteps == 0 || ff_multiplier == 0 || decoder_hidden == 0 || head_hidden == 0) {
    throw ConfigError("encoder: sizes must be positive");
  }
}

SequenceBatch make_batch(std::span<const terrasim::TrajectoryRecord> records,
                         std::span<const Window> windows, std::size_t steps) {
  if (steps == 0) throw DimensionError("make_batch: trajectory windows must have at least one step");
  if (windows.empty()) throw DimensionError("make_batch: no windows");
  SequenceBatch b;
  b.batch = windows.size();
  b.steps = steps;
  const auto rows = static_cast<Eigen::Index>(b.batch * steps);
  b.obs.resize(rows, kObsDim);
  b.act.resize(rows, kActDim);
  b.next.resize(rows, kObsDim);
  b.positions.resize(b.batch * steps);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto& rec = records[windows[w].record];
    rec.validate();
    if (rec.obs_dim != kObsDim || rec.act_dim != kActDim) throw DimensionError("make_batch: unexpected trajectory dims");
    if (windows[w].start + steps > rec.n) throw DimensionError("make_batch: window runs past the trajectory end");
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t src = windows[w].start + t;
      const auto r = static_cast<Eigen::Index>(w * steps + t);
      const auto o = rec.obs(src);
      const auto a = rec.action(src);
      const auto n = rec.next_obs(src);
      for (std::size_t c = 0; c < kObsDim; ++c) {
        b.obs(r, static_cast<Eigen::Index>(c)) = o[c];
        b.next(r, static_cast<Eigen::Index>(c)) = n[c];
      }
      b.act(r, 0) = a[0];
      b.positions[w * steps + t] = src;
    }
  }
  return b;
}

SequenceBatch full_batch(const terrasim::TrajectoryRecord& record) {
  const Window w{0, 0};
  return make_batch(std::span(&record, 1), std::span(&w, 1), record.n);
}

ParamSet init_codec(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamSet p;
  const std::size_t d = cfg.d_model;
  numgrad::init_affine(p, "embed.obs", kObsDim, d, rng);
  numgrad::init_affine(p, "embed.act", kActDim, d, rng);
  numgrad::init_affine(p, "embed.next", kObsDim, d, rng);
  numgrad::Tensor pos({cfg.max_timesteps, d});
  for (double& v : pos.values()) v = 0.02 * normal(rng);
  p.add("embed.pos", std::move(pos));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    numgrad::init_attention_block(p, "block" + std::to_string(l), block_config(cfg), rng);
  }
  numgrad::init_layer_norm(p, "ln_f", d);
  numgrad::init_affine(p, "latent", d, 2 * cfg.latent_dim, rng);
  const std::array<std::size_t, 4> dec{cfg.latent_dim + kObsDim + kActDim, cfg.decoder_hidden,
                                       cfg.decoder_hidden, kObsDim};
  numgrad::init_mlp(p, "dec", dec, rng);
  const std::array<std::size_t, 3> he{cfg.latent_dim, cfg.head_hidden, kTerrainCount};
  numgrad::init_mlp(p, "head_e", he, rng);
  const std::array<std::size_t, 3> hr{cfg.latent_dim, cfg.head_hidden, kRobotDim};
  numgrad::init_mlp(p, "head_r", hr, rng);
  return p;
}

Var tokenize(Graph& g, const SequenceBatch& batch, const EncoderConfig& cfg) {
  if (batch.steps == 0) throw DimensionError("tokenize: empty trajectory");
  for (std::size_t p : batch.positions) {
    if (p >= cfg.max_timesteps) {
      throw DimensionError("tokenize: timestep " + std::to_string(p) + " beyond max " +
                           std::to_string(cfg.max_timesteps));
    }
  }
  Var pos = g.gather_rows(g.param("embed.pos"), batch.positions);
  Var o = g.add(numgrad::affine(g, g.constant(scaled_obs(batch.obs)), "embed.obs"), pos);
  Var a = g.add(numgrad::affine(g, g.constant(batch.act), "embed.act"), pos);
  Var n = g.add(numgrad::affine(g, g.constant(scaled_obs(batch.next)), "embed.next"), pos);
  const std::array<Var, 3> parts{o, a, n};
  return g.interleave_rows(parts);
}

Var timestep_latents(Graph& g, const SequenceBatch& batch, const EncoderConfig& cfg) {
  Var h = tokenize(g, batch, cfg);
  const std::size_t seq = 3 * batch.steps;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    h = numgrad::attention_block(g, h, "block" + std::to_string(l), block_config(cfg), seq);
  }
  h = numgrad::layer_norm(g, h, "ln_f");
  std::vector<std::size_t> read(batch.batch * batch.steps);
  for (std::size_t i = 0; i < read.size(); ++i) read[i] = 3 * i + 2;
  return numgrad::affine(g, g.gather_rows(h, read), "latent");
}

LatentOut encode(Graph& g, const SequenceBatch& batch, const EncoderConfig& cfg, EncodeMode mode,
                 const Matrix* noise) {
  const auto k = static_cast<Eigen::Index>(cfg.latent_dim);
  Var per_step = timestep_latents(g, batch, cfg);
  LatentOut out;
  out.mu = g.segment_mean_rows(g.slice_cols(per_step, 0, k), batch.steps);
  out.log_sigma = g.clamp(g.segment_mean_rows(g.slice_cols(per_step, k, k), batch.steps),
                          kLogSigmaMin, kLogSigmaMax);
  Var pre = out.mu;
  if (mode == EncodeMode::kTrain) {
    if (!noise || noise->rows() != static_cast<Eigen::Index>(batch.batch) || noise->cols() != k) {
      throw DimensionError("encode: train mode needs B x latent noise");
    }
    pre = g.add(out.mu, g.mul(g.exp(out.log_sigma), g.constant(*noise)));
  }
  out.z = g.l2_normalize_rows(pre);
  return out;
}

std::vector<double> encode_record(const ParamSet& params, const EncoderConfig& cfg,
                                  const terrasim::TrajectoryRecord& record,
                                  std::size_t prefix_steps) {
  const SequenceBatch batch = full_batch(record);
  Graph g(params);
  if (prefix_steps == 0) {
    const Matrix& z = g.value(encode(g, batch, cfg, EncodeMode::kInference).z);
    return {z.data(), z.data() + z.size()};
  }
  if (prefix_steps > batch.steps) throw DimensionError("encode_record: prefix longer than trajectory");
  Var per_step = timestep_latents(g, batch, cfg);
  Var mu = g.slice_cols(g.slice_rows(per_step, 0, static_cast<Eigen::Index>(prefix_steps)), 0,
                        static_cast<Eigen::Index>(cfg.latent_dim));
  const Matrix& z = g.value(g.l2_normalize_rows(g.segment_mean_rows(mu, prefix_steps)));
  return {z.data(), z.data() + z.size()};
}

Matrix encode_records(const ParamSet& params, const EncoderConfig& cfg,
                      std::span<const terrasim::TrajectoryRecord> records) {
  Matrix out(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(cfg.latent_dim));
  parallel_for(records.size(), [&](std::size_t i) {
    const auto z = encode_record(params, cfg, records[i]);
    for (std::size_t c = 0; c < z.size(); ++c) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = z[c];
  });
  return out;
}

Var decode(Graph& g, Var z, const SequenceBatch& batch) {
  if (g.rows(z) != static_cast<Eigen::Index>(batch.batch)) throw DimensionError("decode: one latent per trajectory");
  std::vector<std::size_t> repeat(batch.batch * batch.steps);
  for (std::size_t i = 0; i < repeat.size(); ++i) repeat[i] = i / batch.steps;
  const std::array<Var, 3> parts{g.gather_rows(z, repeat), g.constant(scaled_obs(batch.obs)),
                                 g.constant(batch.act)};
  return numgrad::mlp(g, g.concat_cols(parts), "dec", 3, numgrad::Activation::kGelu);
}

Var recon_loss(Graph& g, Var z, const SequenceBatch& batch) {
  Var err = g.sub(g.constant(batch.next), decode(g, z, batch));
  return g.scale(g.sum(g.square(err)), 1.0 / static_cast<double>(batch.batch));
}

ContrastiveOut contrastive_loss(Graph& g, Var z, std::span<const std::uint8_t> labels,
                                double temperature) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (g.rows(z) != n) throw DimensionError("contrastive_loss: one label per latent");
  if (n < 2) throw DimensionError("contrastive_loss: batch needs at least 2 latents");
  if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be positive");
  Matrix weights = Matrix::Zero(n, n);
  Matrix mask = Matrix::Zero(n, n);
  std::size_t anchors = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    mask(i, i) = -1e9;
    std::size_t positives = 0;
    for (Eigen::Index j = 0; j < n; ++j) positives += (j != i && labels[i] == labels[j]);
    if (positives == 0) continue;
    ++anchors;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && labels[i] == labels[j]) weights(i, j) = 1.0 / static_cast<double>(positives);
    }
  }
  ContrastiveOut out;
  out.anchors = anchors;
  if (anchors == 0) {
    out.no_positives = true;
    out.loss = g.scalar_constant(0.0);
    return out;
  }
  weights /= static_cast<double>(anchors);
  Var logits = g.scale(g.matmul(z, g.transpose(z)), 1.0 / temperature);
  Var log_p = g.log_softmax_rows(g.add(logits, g.constant(std::move(mask))));
  out.loss = g.neg(g.sum(g.mul(log_p, g.constant(std::move(weights)))));
  return out;
}

HeadOut heads(Graph& g, Var z) {
  HeadOut out;
  out.terrain_prob = g.softmax_rows(numgrad::mlp(g, z, "head_e", 2, numgrad::Activation::kGelu));
  Var unit = g.sigmoid(numgrad::mlp(g, z, "head_r", 2, numgrad::Activation::kGelu));
  const Eigen::Index rows = g.rows(z);
  out.robot = g.add(g.mul(unit, g.broadcast(g.constant(range_row(true)), rows, kRobotDim)),
                    g.broadcast(g.constant(range_row(false)), rows, kRobotDim));
  return out;
}

HeadLosses head_losses(Graph& g, const HeadOut& out, const Matrix& c_e, const Matrix& c_r,
                       const terrasim::RobotParams& dr_range, bool reverse_kl) {
  const Eigen::Index rows = g.rows(out.terrain_prob);
  if (c_e.rows() != rows || c_e.cols() != static_cast<Eigen::Index>(kTerrainCount) ||
      c_r.rows() != rows || c_r.cols() != static_cast<Eigen::Index>(kRobotDim)) {
    throw DimensionError("head_losses: label shapes do not match the batch");
  }
  if ((c_e.array() <= 0.0).any()) throw ConfigError("head_losses: c_e needs strictly positive (smoothed) entries");
  const auto r = dr_range.to_array();
  Matrix inv_r(1, kRobotDim);
  for (std::size_t k = 0; k < kRobotDim; ++k) {
    if (!(r[k] > 0.0)) throw ConfigError("head_losses: DR half-widths must be positive");
    inv_r(0, static_cast<Eigen::Index>(k)) = 1.0 / r[k];
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  Var log_target = g.constant(Matrix(c_e.array().log().matrix()));
  Var log_p = g.log(out.terrain_prob);
  HeadLosses l;
  if (reverse_kl) {
    l.terrain = g.scale(g.sum(g.mul(g.constant(c_e), g.sub(log_target, log_p))), inv_rows);
  } else {
    l.terrain = g.scale(g.sum(g.mul(out.terrain_prob, g.sub(log_p, log_target))), inv_rows);
  }
  Var abs_err = g.abs(g.sub(out.robot, g.constant(c_r)));
  l.robot = g.scale(g.sum(g.mul(abs_err, g.broadcast(g.constant(std::move(inv_r)), rows, kRobotDim))),
                    inv_rows / static_cast<double>(kRobotDim));
  return l;
}

HeadPrediction predict_heads(const ParamSet& params, std::span<const double> z) {
  Matrix zm(1, static_cast<Eigen::Index>(z.size()));
  for (std::size_t i = 0; i < z.size(); ++i) zm(0, static_cast<Eigen::Index>(i)) = z[i];
  Graph g(params);
  const HeadOut out = heads(g, g.constant(std::move(zm)));
  HeadPrediction p;
  const Matrix& e = g.value(out.terrain_prob);
  const Matrix& r = g.value(out.robot);
  for (std::size_t k = 0; k < kTerrainCount; ++k) p.terrain[k] = e(0, static_cast<Eigen::Index>(k));
  std::array<double, kRobotDim> ra{};
  for (std::size_t k = 0; k < kRobotDim; ++k) ra[k] = r(0, static_cast<Eigen::Index>(k));
  p.robot = terrasim::clamp_to_global(terrasim::RobotParams::from_array(ra));
  return p;
}

void save_codec(const std::filesystem::path& path, const Codec& codec) {
  const auto& c = codec.config;
  ParamSet out = codec.params;
  out.add("meta.arch", numgrad::Tensor({10}, std::vector<double>{
                                                static_cast<double>(kCodecMetaVersion),
                                                static_cast<double>(c.d_model),
                                                static_cast<double>(c.layers),
                                                static_cast<double>(c.heads),
                                                static_cast<double>(c.ff_multiplier),
                                                static_cast<double>(c.latent_dim),
                                                static_cast<double>(c.max_timesteps),
                                                static_cast<double>(c.attention_window),
                                                static_cast<double>(c.decoder_hidden),
                                                static_cast<double>(c.head_hidden)}));
  numgrad::save_weights(out, path);
}

Codec load_codec(const std::filesystem::path& path) {
  const ParamSet all = numgrad::load_weights(path);
  if (!all.contains("meta.arch") || all.at("meta.arch").size() != 10) {
    throw FormatError(FormatErrorKind::kMalformed, path.string() + " is not a codec checkpoint");
  }
  const auto& m = all.at("meta.arch");
  if (static_cast<std::uint32_t>(m[0]) != kCodecMetaVersion) {
    throw FormatError(FormatErrorKind::kBadVersion, "codec meta version " + std::to_string(m[0]));
  }
  Codec codec;
  auto sz = [&](std::size_t i) { return static_cast<std::size_t>(m[i]); };
  codec.config = {sz(1), sz(2), sz(3), sz(4), sz(5), sz(6), sz(7), sz(8), sz(9)};
  codec.config.validate();
  for (const auto& e : all) {
    if (e.name.rfind("meta.", 0) != 0) codec.params.add(e.name, e.value);
  }
  if (!codec.params.same_layout(init_codec(codec.config, 0))) {
    throw FormatError(FormatErrorKind::kMalformed, path.string() + " does not match its declared architecture");
  }
  return codec;
}

}  // namespace loopsr::trajcodec

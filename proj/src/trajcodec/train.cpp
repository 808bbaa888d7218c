#include "loopsr/trajcodec/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "loopsr/common/error.hpp"

namespace loopsr::trajcodec {

namespace {

using terrasim::kRobotDim;
using terrasim::kTerrainCount;

double value_or_zero(const Graph& g, Var v, double weight) {
  return weight != 0.0 ? g.scalar(v) : 0.0;
}

}  // namespace

void CodecTrainConfig::validate() const {
  encoder.validate();
  if (!(lr > 0.0)) throw ConfigError("codec lr must be positive");
  if (max_grad_norm < 0.0) throw ConfigError("codec max_grad_norm must be >= 0");
  if (batch_size < 2) throw ConfigError("codec batch_size must be >= 2");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
  if (!(temperature > 0.0)) throw ConfigError("contrastive temperature must be positive");
  for (double w : {weights.recon, weights.contrastive, weights.terrain, weights.robot, weights.kl}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
  if (weights.terrain > 0.0 && label_smoothing == 0.0) {
    throw ConfigError("terrain KL needs label_smoothing > 0 (c_e entries must be positive)");
  }
  for (double r : dr_range.to_array()) {
    if (!(r > 0.0)) throw ConfigError("codec dr_range half-widths must be positive");
  }
}

LabeledBatch make_labeled_batch(std::span<const terrasim::TrajectoryRecord> records,
                                std::span<const Window> windows, std::size_t steps,
                                double label_smoothing) {
  LabeledBatch b;
  b.seq = make_batch(records, windows, steps);
  const auto rows = static_cast<Eigen::Index>(windows.size());
  b.c_e.resize(rows, kTerrainCount);
  b.c_r.resize(rows, kRobotDim);
  b.terrain.resize(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& label = records[windows[i].record].label;
    if (!label) throw ConfigError("codec training needs labelled trajectories");
    const auto r = static_cast<Eigen::Index>(i);
    b.terrain[i] = static_cast<std::uint8_t>(label->terrain);
    const auto ce = terrasim::smoothed_one_hot(label->terrain, label_smoothing);
    for (std::size_t k = 0; k < kTerrainCount; ++k) b.c_e(r, static_cast<Eigen::Index>(k)) = ce[k];
    const auto cr = label->robot.to_array();
    for (std::size_t k = 0; k < kRobotDim; ++k) b.c_r(r, static_cast<Eigen::Index>(k)) = cr[k];
  }
  return b;
}

JointLoss joint_loss(Graph& g, const LabeledBatch& batch, const CodecTrainConfig& cfg,
                     const Matrix& noise) {
  const auto& w = cfg.weights;
  const LatentOut lat = encode(g, batch.seq, cfg.encoder, EncodeMode::kTrain, &noise);
  JointLoss out;
  std::vector<Var> terms;
  if (w.recon > 0.0) {
    out.recon = recon_loss(g, lat.z, batch.seq);
    terms.push_back(g.scale(out.recon, w.recon));
  }
  if (w.contrastive > 0.0) {
    const ContrastiveOut con = contrastive_loss(g, lat.z, batch.terrain, cfg.temperature);
    out.contrastive = con.loss;
    out.no_positives = con.no_positives;
    terms.push_back(g.scale(out.contrastive, w.contrastive));
  }
  if (w.terrain > 0.0 || w.robot > 0.0) {
    const HeadLosses h = head_losses(g, heads(g, lat.z), batch.c_e, batch.c_r, cfg.dr_range, cfg.reverse_kl);
    out.terrain = h.terrain;
    out.robot = h.robot;
    if (w.terrain > 0.0) terms.push_back(g.scale(h.terrain, w.terrain));
    if (w.robot > 0.0) terms.push_back(g.scale(h.robot, w.robot));
  }
  if (w.kl > 0.0) {
    // 0.5 * sum(mu^2 + sigma^2 - 1 - 2 log sigma), averaged over the batch
    Var per = g.sub(g.add(g.square(lat.mu), g.exp(g.scale(lat.log_sigma, 2.0))),
                    g.add_scalar(g.scale(lat.log_sigma, 2.0), 1.0));
    out.kl = g.scale(g.sum(per), 0.5 / static_cast<double>(batch.seq.batch));
    terms.push_back(g.scale(out.kl, w.kl));
  }
  if (terms.empty()) throw ConfigError("all codec loss weights are zero");
  out.total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) out.total = g.add(out.total, terms[i]);
  return out;
}

void LossBreakdown::accumulate(const LossBreakdown& o) {
  total += o.total;
  recon += o.recon;
  contrastive += o.contrastive;
  terrain += o.terrain;
  robot += o.robot;
  kl += o.kl;
  no_positive_batches += o.no_positive_batches;
}

void LossBreakdown::scale(double s) {
  total *= s;
  recon *= s;
  contrastive *= s;
  terrain *= s;
  robot *= s;
  kl *= s;
}

CodecTrainer::CodecTrainer(const CodecTrainConfig& cfg, std::uint64_t seed)
    : CodecTrainer(Codec{cfg.encoder, init_codec(cfg.encoder, derive_seed(seed, {21}))}, cfg, seed) {}

CodecTrainer::CodecTrainer(Codec codec, const CodecTrainConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      codec_(std::move(codec)),
      adam_(codec_.params, numgrad::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.max_grad_norm}),
      rng_(derive_seed(seed, {22})) {
  cfg_.validate();
  if (!codec_.params.same_layout(init_codec(codec_.config, 0))) {
    throw DimensionError("codec parameters do not match the encoder config");
  }
  cfg_.encoder = codec_.config;
}

LossBreakdown CodecTrainer::update(std::span<const terrasim::TrajectoryRecord> data,
                                   std::span<const std::size_t> records) {
  std::size_t shortest = data[records[0]].n;
  for (std::size_t r : records) shortest = std::min(shortest, data[r].n);
  const std::size_t steps = cfg_.crop_steps == 0 ? shortest : std::min(cfg_.crop_steps, shortest);
  std::vector<Window> windows(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::size_t slack = data[records[i]].n - steps;
    windows[i] = {records[i], slack == 0 ? 0 : static_cast<std::size_t>(rng_() % (slack + 1))};
  }
  const LabeledBatch batch = make_labeled_batch(data, windows, steps, cfg_.label_smoothing);
  Matrix noise(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(cfg_.encoder.latent_dim));
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng_);

  Graph g(codec_.params);
  const JointLoss loss = joint_loss(g, batch, cfg_, noise);
  LossBreakdown out;
  out.total = g.scalar(loss.total);
  out.recon = value_or_zero(g, loss.recon, cfg_.weights.recon);
  out.contrastive = value_or_zero(g, loss.contrastive, cfg_.weights.contrastive);
  out.terrain = cfg_.weights.terrain > 0.0 || cfg_.weights.robot > 0.0 ? g.scalar(loss.terrain) : 0.0;
  out.robot = cfg_.weights.terrain > 0.0 || cfg_.weights.robot > 0.0 ? g.scalar(loss.robot) : 0.0;
  out.kl = value_or_zero(g, loss.kl, cfg_.weights.kl);
  out.no_positive_batches = loss.no_positives ? 1 : 0;
  if (!std::isfinite(out.total)) throw NumericalError("codec_train", "joint loss is not finite");
  g.backward(loss.total);
  const ParamSet grads = g.gradients();
  if (!std::isfinite(numgrad::global_norm(grads))) {
    throw NumericalError("codec_train", "gradient is not finite");
  }
  numgrad::adam_update(codec_.params, grads, adam_);
  ++steps_;
  return out;
}

LossBreakdown CodecTrainer::step(std::span<const terrasim::TrajectoryRecord> data) {
  if (data.size() < 2) throw ConfigError("codec step needs at least 2 trajectories");
  const std::size_t b = std::min(cfg_.batch_size, data.size());
  std::vector<std::size_t> idx(b);
  for (auto& i : idx) i = static_cast<std::size_t>(rng_() % data.size());
  return update(data, idx);
}

EpochRecord CodecTrainer::epoch(std::span<const terrasim::TrajectoryRecord> data) {
  if (data.size() < 2) throw ConfigError("codec epoch needs at least 2 trajectories");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng_);
  EpochRecord rec;
  rec.epoch = epochs_;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    // a trailing singleton cannot form a contrastive pair; fold it into the previous batch
    if (order.size() - end == 1) end = order.size();
    rec.mean.accumulate(update(data, std::span(order).subspan(start, end - start)));
    ++rec.steps;
    if (end == order.size()) break;
  }
  rec.mean.scale(1.0 / static_cast<double>(rec.steps));
  ++epochs_;
  return rec;
}

void train_epochs(CodecTrainer& trainer, std::span<const terrasim::TrajectoryRecord> data,
                  std::size_t epochs, const EpochHook& hook) {
  for (std::size_t e = 0; e < epochs; ++e) {
    const EpochRecord rec = trainer.epoch(data);
    if (hook) hook(rec);
  }
}

CodecTrainResult train_encoder(std::span<const terrasim::TrajectoryRecord> data,
                               const CodecTrainConfig& cfg, std::size_t epochs, std::uint64_t seed,
                               const EpochHook& hook) {
  CodecTrainer trainer(cfg, seed);
  CodecTrainResult result;
  train_epochs(trainer, data, epochs, [&](const EpochRecord& rec) {
    result.history.push_back(rec);
    if (hook) hook(rec);
  });
  result.codec = trainer.codec();
  return result;
}

}  // namespace loopsr::trajcodec

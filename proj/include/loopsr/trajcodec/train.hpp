#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "loopsr/common/rng.hpp"
#include "loopsr/numgrad/adam.hpp"
#include "loopsr/trajcodec/codec.hpp"

namespace loopsr::trajcodec {

struct LossWeights {
  double recon = 1.0;
  double contrastive = 0.5;
  double terrain = 0.5;
  double robot = 0.5;
  double kl = 1e-3;
};

struct CodecTrainConfig {
  EncoderConfig encoder;
  LossWeights weights;
  double lr = 1e-4;
  double max_grad_norm = 1.0;
  std::size_t batch_size = 32;
  std::size_t crop_steps = 32;  // random window length; 0 trains on whole trajectories
  double label_smoothing = 0.05;
  double temperature = 1.0;
  bool reverse_kl = false;
  terrasim::RobotParams dr_range = terrasim::robot_full_range();

  void validate() const;
};

// Window batch plus the supervision read from the trajectory labels.
struct LabeledBatch {
  SequenceBatch seq;
  std::vector<std::uint8_t> terrain;
  Matrix c_e;  // B x 5 smoothed one-hot
  Matrix c_r;  // B x 4
};

// Raises ConfigError when a record carries no label.
LabeledBatch make_labeled_batch(std::span<const terrasim::TrajectoryRecord> records,
                                std::span<const Window> windows, std::size_t steps,
                                double label_smoothing);

struct JointLoss {
  Var total;
  Var recon, contrastive, terrain, robot, kl;
  bool no_positives = false;
};

// L = w_rec L_rec + w_con L_con + w_e L_e + w_r L_r + beta KL(q || N(0, I)).
// Terms with zero weight are left off the tape.
JointLoss joint_loss(Graph& g, const LabeledBatch& batch, const CodecTrainConfig& cfg,
                     const Matrix& noise);

struct LossBreakdown {
  double total = 0.0;
  double recon = 0.0;
  double contrastive = 0.0;
  double terrain = 0.0;
  double robot = 0.0;
  double kl = 0.0;
  std::size_t no_positive_batches = 0;

  void accumulate(const LossBreakdown& other);
  void scale(double s);
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  LossBreakdown mean;
};

class CodecTrainer {
 public:
  CodecTrainer(const CodecTrainConfig& cfg, std::uint64_t seed);
  CodecTrainer(Codec codec, const CodecTrainConfig& cfg, std::uint64_t seed);

  // One optimizer step on a uniformly drawn minibatch of `data`.
  LossBreakdown step(std::span<const terrasim::TrajectoryRecord> data);
  // One shuffled pass over `data`.
  EpochRecord epoch(std::span<const terrasim::TrajectoryRecord> data);

  const Codec& codec() const { return codec_; }
  const CodecTrainConfig& config() const { return cfg_; }
  std::size_t steps_taken() const { return steps_; }
  std::size_t epochs_done() const { return epochs_; }

 private:
  LossBreakdown update(std::span<const terrasim::TrajectoryRecord> data,
                       std::span<const std::size_t> records);

  CodecTrainConfig cfg_;
  Codec codec_;
  numgrad::AdamState adam_;
  Rng rng_;
  std::size_t steps_ = 0;
  std::size_t epochs_ = 0;
};

using EpochHook = std::function<void(const EpochRecord&)>;

struct CodecTrainResult {
  Codec codec;
  std::vector<EpochRecord> history;
};

void train_epochs(CodecTrainer& trainer, std::span<const terrasim::TrajectoryRecord> data,
                  std::size_t epochs, const EpochHook& hook = {});
CodecTrainResult train_encoder(std::span<const terrasim::TrajectoryRecord> data,
                               const CodecTrainConfig& cfg, std::size_t epochs, std::uint64_t seed,
                               const EpochHook& hook = {});

}  // namespace loopsr::trajcodec

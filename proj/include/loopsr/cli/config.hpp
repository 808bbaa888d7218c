#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "loopsr/loopctl/loop.hpp"
#include "loopsr/mdpgap/sweep.hpp"
#include "loopsr/ppo/trainer.hpp"
#include "loopsr/trajcodec/train.hpp"

namespace loopsr::cli {

inline constexpr int kSchemaVersion = 1;

struct CodecStageConfig {
  trajcodec::CodecTrainConfig train;
  std::size_t epochs = 30;               // offline passes after pretraining
  std::size_t steps_per_iteration = 1;   // co-scheduled steps for i > encoder_start
  double store_smoothing = 0.05;
};

struct EvalConfig {
  std::size_t episodes = 20;
  std::uint64_t seed = 777;
};

struct AblationConfig {
  double holdout_fraction = 0.2;
  std::size_t robots_per_cell = 2;  // scenarios per terrain x difficulty cell
  std::size_t loops = 10;
};

struct RunConfig {
  int schema_version = kSchemaVersion;
  std::uint64_t seed = 1;
  std::string out = "run";
  ppo::PretrainConfig pretrain;
  CodecStageConfig codec;
  loopctl::LoopConfig loop;
  loopctl::TestEnvSpec test_env;
  loopctl::LabelMode labels = loopctl::LabelMode::kHidden;
  EvalConfig eval;
  AblationConfig ablation;
  mdpgap::SweepConfig theory;

  void validate() const;
};

// Unknown keys and type mismatches raise ConfigError naming the dotted key.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_config(const std::filesystem::path& path);
// Pretty-printed resolved config, every default spelled out.
void write_config(const std::filesystem::path& path, const RunConfig& c);
std::uint64_t config_hash(const RunConfig& c);

loopctl::LabelMode parse_label_mode(const std::string& s);
std::string label_mode_name(loopctl::LabelMode m);

}  // namespace loopsr::cli

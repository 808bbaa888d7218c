#include "loopsr/cli/config.hpp"

#include <fstream>
#include <set>

#include "loopsr/common/error.hpp"

namespace loopsr::cli {

using nlohmann::json;

namespace {

// Reads keys of one JSON object, remembering which were consumed so that
// leftovers can be reported with their full dotted path.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("'" + display() + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + dotted(key) + "': " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string dotted(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown key '" + dotted(key) + "'");
    }
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json robot_json(const terrasim::RobotParams& p) {
  return {{"mass", p.mass}, {"friction", p.friction}, {"motor", p.motor}, {"restitution", p.restitution}};
}

void read_robot(const json& j, const std::string& path, terrasim::RobotParams& p) {
  Reader r(j, path);
  r.get("mass", p.mass);
  r.get("friction", p.friction);
  r.get("motor", p.motor);
  r.get("restitution", p.restitution);
  r.finish();
}

void read_ppo(const json& j, const std::string& path, ppo::PpoConfig& c) {
  Reader r(j, path);
  r.get("gamma", c.gamma);
  r.get("lambda", c.lambda);
  r.get("clip", c.clip);
  r.get("lr", c.lr);
  r.get("entropy_coef", c.entropy_coef);
  r.get("value_coef", c.value_coef);
  r.get("epochs", c.epochs);
  r.get("minibatches", c.minibatches);
  r.get("max_grad_norm", c.max_grad_norm);
  r.finish();
}

json ppo_json(const ppo::PpoConfig& c) {
  return {{"gamma", c.gamma},   {"lambda", c.lambda},           {"clip", c.clip},
          {"lr", c.lr},         {"entropy_coef", c.entropy_coef}, {"value_coef", c.value_coef},
          {"epochs", c.epochs}, {"minibatches", c.minibatches}, {"max_grad_norm", c.max_grad_norm}};
}

void read_trainer(Reader& r, ppo::TrainerConfig& t) {
  r.get("envs", t.envs);
  r.get("steps_per_iteration", t.steps_per_iteration);
  if (const json* p = r.child("ppo")) read_ppo(*p, r.dotted("ppo"), t.ppo);
}

void read_pretrain(const json& j, ppo::PretrainConfig& c) {
  Reader r(j, "pretrain");
  r.get("iterations", c.iterations);
  r.get("encoder_start", c.encoder_start);
  r.get("dataset_checkpoints", c.dataset_checkpoints);
  r.get("trajectories_per_checkpoint", c.trajectories_per_checkpoint);
  read_trainer(r, c.trainer);
  if (const json* n = r.child("net")) {
    Reader nr(*n, "pretrain.net");
    nr.get("hidden", c.net.hidden);
    nr.get("init_log_std", c.net.init_log_std);
    nr.finish();
  }
  if (const json* d = r.child("dr_range")) read_robot(*d, "pretrain.dr_range", c.domain.dr_range);
  r.finish();
}

void read_codec(const json& j, CodecStageConfig& c) {
  Reader r(j, "codec");
  auto& t = c.train;
  r.get("epochs", c.epochs);
  r.get("steps_per_iteration", c.steps_per_iteration);
  r.get("store_smoothing", c.store_smoothing);
  r.get("lr", t.lr);
  r.get("max_grad_norm", t.max_grad_norm);
  r.get("batch_size", t.batch_size);
  r.get("crop_steps", t.crop_steps);
  r.get("label_smoothing", t.label_smoothing);
  r.get("temperature", t.temperature);
  r.get("reverse_kl", t.reverse_kl);
  if (const json* e = r.child("encoder")) {
    Reader er(*e, "codec.encoder");
    auto& enc = t.encoder;
    er.get("d_model", enc.d_model);
    er.get("layers", enc.layers);
    er.get("heads", enc.heads);
    er.get("ff_multiplier", enc.ff_multiplier);
    er.get("latent_dim", enc.latent_dim);
    er.get("max_timesteps", enc.max_timesteps);
    er.get("attention_window", enc.attention_window);
    er.get("decoder_hidden", enc.decoder_hidden);
    er.get("head_hidden", enc.head_hidden);
    er.finish();
  }
  if (const json* w = r.child("weights")) {
    Reader wr(*w, "codec.weights");
    wr.get("recon", t.weights.recon);
    wr.get("contrastive", t.weights.contrastive);
    wr.get("terrain", t.weights.terrain);
    wr.get("robot", t.weights.robot);
    wr.get("kl", t.weights.kl);
    wr.finish();
  }
  r.finish();
}

json codec_json(const CodecStageConfig& c) {
  const auto& t = c.train;
  const auto& e = t.encoder;
  return {{"epochs", c.epochs},
          {"steps_per_iteration", c.steps_per_iteration},
          {"store_smoothing", c.store_smoothing},
          {"lr", t.lr},
          {"max_grad_norm", t.max_grad_norm},
          {"batch_size", t.batch_size},
          {"crop_steps", t.crop_steps},
          {"label_smoothing", t.label_smoothing},
          {"temperature", t.temperature},
          {"reverse_kl", t.reverse_kl},
          {"encoder",
           {{"d_model", e.d_model},
            {"layers", e.layers},
            {"heads", e.heads},
            {"ff_multiplier", e.ff_multiplier},
            {"latent_dim", e.latent_dim},
            {"max_timesteps", e.max_timesteps},
            {"attention_window", e.attention_window},
            {"decoder_hidden", e.decoder_hidden},
            {"head_hidden", e.head_hidden}}},
          {"weights",
           {{"recon", t.weights.recon},
            {"contrastive", t.weights.contrastive},
            {"terrain", t.weights.terrain},
            {"robot", t.weights.robot},
            {"kl", t.weights.kl}}}};
}

void read_loop(const json& j, loopctl::LoopConfig& c) {
  Reader r(j, "loop");
  r.get("alpha", c.alpha);
  r.get("tau", c.tau);
  r.get("neighbors", c.neighbors);
  r.get("trajectories_per_batch", c.trajectories_per_batch);
  r.get("iterations_per_episode", c.iterations_per_episode);
  r.get("episodes_per_redeploy", c.episodes_per_redeploy);
  r.get("loops", c.loops);
  r.get("eval_episodes", c.eval_episodes);
  r.get("difficulties", c.difficulties);
  r.finish();
}

json loop_json(const loopctl::LoopConfig& c) {
  return {{"alpha", c.alpha},
          {"tau", c.tau},
          {"neighbors", c.neighbors},
          {"trajectories_per_batch", c.trajectories_per_batch},
          {"iterations_per_episode", c.iterations_per_episode},
          {"episodes_per_redeploy", c.episodes_per_redeploy},
          {"loops", c.loops},
          {"eval_episodes", c.eval_episodes},
          {"difficulties", c.difficulties}};
}

void read_test_env(const json& j, RunConfig& c) {
  Reader r(j, "test_env");
  std::string terrain(terrasim::terrain_name(c.test_env.terrain));
  std::string labels = label_mode_name(c.labels);
  r.get("terrain", terrain);
  r.get("difficulty", c.test_env.difficulty);
  r.get("labels", labels);
  if (const json* rb = r.child("robot")) read_robot(*rb, "test_env.robot", c.test_env.robot);
  r.finish();
  c.test_env.terrain = terrasim::parse_terrain(terrain);
  c.labels = parse_label_mode(labels);
}

}  // namespace

loopctl::LabelMode parse_label_mode(const std::string& s) {
  if (s == "hidden") return loopctl::LabelMode::kHidden;
  if (s == "poisoned") return loopctl::LabelMode::kPoisoned;
  throw ConfigError("test_env.labels must be 'hidden' or 'poisoned', got '" + s + "'");
}

std::string label_mode_name(loopctl::LabelMode m) {
  switch (m) {
    case loopctl::LabelMode::kHidden: return "hidden";
    case loopctl::LabelMode::kPoisoned: return "poisoned";
    case loopctl::LabelMode::kTrue: return "true";
  }
  return "hidden";
}

void RunConfig::validate() const {
  if (schema_version != kSchemaVersion) {
    throw ConfigError("schema_version " + std::to_string(schema_version) + " unsupported (expected " +
                      std::to_string(kSchemaVersion) + ")");
  }
  if (out.empty()) throw ConfigError("out must name a directory");
  if (labels == loopctl::LabelMode::kTrue) throw ConfigError("test_env.labels cannot leak true labels");
  ppo::validate(pretrain);
  codec.train.validate();
  if (!(codec.store_smoothing > 0.0 && codec.store_smoothing < 1.0)) {
    throw ConfigError("codec.store_smoothing must be in (0, 1)");
  }
  loop.validate();
  terrasim::validate(test_env.env_params());
  if (eval.episodes == 0) throw ConfigError("eval.episodes must be >= 1");
  if (!(ablation.holdout_fraction > 0.0 && ablation.holdout_fraction < 1.0)) {
    throw ConfigError("ablation.holdout_fraction must be in (0, 1)");
  }
  if (ablation.robots_per_cell == 0 || ablation.loops == 0) {
    throw ConfigError("ablation.robots_per_cell and ablation.loops must be >= 1");
  }
  theory.validate();
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "");
  r.get("schema_version", c.schema_version);
  r.get("seed", c.seed);
  r.get("out", c.out);
  if (const json* p = r.child("pretrain")) read_pretrain(*p, c.pretrain);
  if (const json* p = r.child("codec")) read_codec(*p, c.codec);
  if (const json* p = r.child("loop")) read_loop(*p, c.loop);
  if (const json* p = r.child("test_env")) read_test_env(*p, c);
  if (const json* p = r.child("eval")) {
    Reader er(*p, "eval");
    er.get("episodes", c.eval.episodes);
    er.get("seed", c.eval.seed);
    er.finish();
  }
  if (const json* p = r.child("ablation")) {
    Reader ar(*p, "ablation");
    ar.get("holdout_fraction", c.ablation.holdout_fraction);
    ar.get("robots_per_cell", c.ablation.robots_per_cell);
    ar.get("loops", c.ablation.loops);
    ar.finish();
  }
  if (const json* p = r.child("theory")) c.theory = mdpgap::sweep_config_from_json(*p);
  r.finish();
  // the loop trains with the pretraining PPO settings and DR range
  c.loop.trainer = c.pretrain.trainer;
  c.loop.dr_range = c.pretrain.domain.dr_range;
  c.codec.train.dr_range = c.pretrain.domain.dr_range;
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  const auto& p = c.pretrain;
  return {{"schema_version", c.schema_version},
          {"seed", c.seed},
          {"out", c.out},
          {"pretrain",
           {{"iterations", p.iterations},
            {"encoder_start", p.encoder_start},
            {"dataset_checkpoints", p.dataset_checkpoints},
            {"trajectories_per_checkpoint", p.trajectories_per_checkpoint},
            {"envs", p.trainer.envs},
            {"steps_per_iteration", p.trainer.steps_per_iteration},
            {"ppo", ppo_json(p.trainer.ppo)},
            {"net", {{"hidden", p.net.hidden}, {"init_log_std", p.net.init_log_std}}},
            {"dr_range", robot_json(p.domain.dr_range)}}},
          {"codec", codec_json(c.codec)},
          {"loop", loop_json(c.loop)},
          {"test_env",
           {{"terrain", std::string(terrasim::terrain_name(c.test_env.terrain))},
            {"difficulty", c.test_env.difficulty},
            {"robot", robot_json(c.test_env.robot)},
            {"labels", label_mode_name(c.labels)}}},
          {"eval", {{"episodes", c.eval.episodes}, {"seed", c.eval.seed}}},
          {"ablation",
           {{"holdout_fraction", c.ablation.holdout_fraction},
            {"robots_per_cell", c.ablation.robots_per_cell},
            {"loops", c.ablation.loops}}},
          {"theory", mdpgap::to_json(c.theory)}};
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void write_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(c).dump(2) << "\n";
}

std::uint64_t config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace loopsr::cli

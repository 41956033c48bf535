#include "segrl/config.hpp"

#include <fstream>

#include "segrl/errors.hpp"

namespace segrl {

namespace {

using nlohmann::json;

void expect_object(const json& j, const std::string& where) {
  if (!j.is_object())
    throw ConfigError("config: '" + where + "' must be an object");
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* key : allowed)
      if (it.key() == key) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError("config: unknown key '" + where + it.key() + "'");
  }
}

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key +
                      "': " + e.what());
  }
}

void parse_env(const json& j, EnvConfig& env) {
  expect_object(j, "env");
  reject_unknown(j,
                 {"task", "horizon", "distractors_min", "distractors_max",
                  "include_background", "teleport_prob", "image_size",
                  "patch_size", "segment_dim", "encoder_seed", "min_pixels",
                  "post_process_kernel"},
                 "env.");
  if (j.contains("task")) env.task = parse_task(j.at("task").get<std::string>());
  read(j, "horizon", env.horizon);
  read(j, "distractors_min", env.distractors_min);
  read(j, "distractors_max", env.distractors_max);
  read(j, "include_background", env.include_background);
  read(j, "teleport_prob", env.teleport_prob);
  read(j, "image_size", env.image_size);
  read(j, "patch_size", env.patch_size);
  read(j, "segment_dim", env.segment_dim);
  read(j, "encoder_seed", env.encoder_seed);
  read(j, "min_pixels", env.min_pixels);
  read(j, "post_process_kernel", env.post_process_kernel);
}

void parse_arch(const json& j, ArchConfig& arch) {
  expect_object(j, "arch");
  reject_unknown(j,
                 {"model_dim", "decoder_layers", "decoder_heads", "ffn_hidden",
                  "dropout", "proj_hidden_layers", "proj_hidden_size",
                  "segment_dim", "proprio_dim", "action_dim", "log_std_min",
                  "log_std_max"},
                 "arch.");
  read(j, "model_dim", arch.model_dim);
  read(j, "decoder_layers", arch.decoder_layers);
  read(j, "decoder_heads", arch.decoder_heads);
  read(j, "ffn_hidden", arch.ffn_hidden);
  read(j, "dropout", arch.dropout);
  read(j, "proj_hidden_layers", arch.proj_hidden_layers);
  read(j, "proj_hidden_size", arch.proj_hidden_size);
  read(j, "segment_dim", arch.segment_dim);
  read(j, "proprio_dim", arch.proprio_dim);
  read(j, "action_dim", arch.action_dim);
  read(j, "log_std_min", arch.log_std_min);
  read(j, "log_std_max", arch.log_std_max);
}

void parse_sac(const json& j, SacConfig& sac) {
  expect_object(j, "sac");
  reject_unknown(j,
                 {"gamma", "tau", "actor_lr", "critic_lr", "alpha_lr",
                  "batch_size", "actor_update_freq", "critic_update_freq",
                  "target_update_freq", "target_entropy", "updates_per_step",
                  "num_envs", "warmup_steps", "replay_capacity"},
                 "sac.");
  read(j, "gamma", sac.gamma);
  read(j, "tau", sac.tau);
  read(j, "actor_lr", sac.actor_lr);
  read(j, "critic_lr", sac.critic_lr);
  read(j, "alpha_lr", sac.alpha_lr);
  read(j, "batch_size", sac.batch_size);
  read(j, "actor_update_freq", sac.actor_update_freq);
  read(j, "critic_update_freq", sac.critic_update_freq);
  read(j, "target_update_freq", sac.target_update_freq);
  if (j.contains("target_entropy") && !j.at("target_entropy").is_null())
    sac.target_entropy = j.at("target_entropy").get<double>();
  read(j, "updates_per_step", sac.updates_per_step);
  read(j, "num_envs", sac.num_envs);
  read(j, "warmup_steps", sac.warmup_steps);
  read(j, "replay_capacity", sac.replay_capacity);
}

void parse_eval(const json& j, EvalConfig& eval) {
  expect_object(j, "eval");
  reject_unknown(j,
                 {"every", "episodes", "bootstrap_replications", "confidence",
                  "checkpoint_every"},
                 "eval.");
  read(j, "every", eval.every);
  read(j, "episodes", eval.episodes);
  read(j, "bootstrap_replications", eval.bootstrap_replications);
  read(j, "confidence", eval.confidence);
  read(j, "checkpoint_every", eval.checkpoint_every);
}

}  // namespace

void EvalConfig::validate() const {
  if (every < 1) throw ConfigError("eval.every must be >= 1");
  if (episodes < 0) throw ConfigError("eval.episodes must be >= 0");
  if (bootstrap_replications < 1)
    throw ConfigError("eval.bootstrap_replications must be >= 1");
  if (confidence <= 0.0 || confidence >= 1.0)
    throw ConfigError("eval.confidence must be in (0,1)");
  if (checkpoint_every < 1) throw ConfigError("eval.checkpoint_every must be >= 1");
}

void RunConfig::validate() const {
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (parity != "desk" && parity != "paper")
    throw ConfigError("parity must be desk|paper");
  env.validate();
  arch.validate();
  sac.validate();
  eval.validate();
  if (env.segment_dim != arch.segment_dim)
    throw ConfigError("env.segment_dim must equal arch.segment_dim");
  if (arch.proprio_dim != kProprioDim)
    throw ConfigError("arch.proprio_dim must be 2 (effector position)");
  if (arch.action_dim != kActionDim)
    throw ConfigError("arch.action_dim must be 2");
}

nlohmann::json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["run_dir"] = run_dir;
  j["agent"] = to_string(agent);
  j["parity"] = parity;
  j["steps"] = steps;
  j["env"] = {{"task", to_string(env.task)},
              {"horizon", env.horizon},
              {"distractors_min", env.distractors_min},
              {"distractors_max", env.distractors_max},
              {"include_background", env.include_background},
              {"teleport_prob", env.teleport_prob},
              {"image_size", env.image_size},
              {"patch_size", env.patch_size},
              {"segment_dim", env.segment_dim},
              {"encoder_seed", env.encoder_seed},
              {"min_pixels", env.min_pixels},
              {"post_process_kernel", env.post_process_kernel}};
  j["arch"] = {{"model_dim", arch.model_dim},
               {"decoder_layers", arch.decoder_layers},
               {"decoder_heads", arch.decoder_heads},
               {"ffn_hidden", arch.ffn_hidden},
               {"dropout", arch.dropout},
               {"proj_hidden_layers", arch.proj_hidden_layers},
               {"proj_hidden_size", arch.proj_hidden_size},
               {"segment_dim", arch.segment_dim},
               {"proprio_dim", arch.proprio_dim},
               {"action_dim", arch.action_dim},
               {"log_std_min", arch.log_std_min},
               {"log_std_max", arch.log_std_max}};
  j["sac"] = {{"gamma", sac.gamma},
              {"tau", sac.tau},
              {"actor_lr", sac.actor_lr},
              {"critic_lr", sac.critic_lr},
              {"alpha_lr", sac.alpha_lr},
              {"batch_size", sac.batch_size},
              {"actor_update_freq", sac.actor_update_freq},
              {"critic_update_freq", sac.critic_update_freq},
              {"target_update_freq", sac.target_update_freq},
              {"updates_per_step", sac.updates_per_step},
              {"num_envs", sac.num_envs},
              {"warmup_steps", sac.warmup_steps},
              {"replay_capacity", sac.replay_capacity}};
  if (sac.target_entropy)
    j["sac"]["target_entropy"] = *sac.target_entropy;
  else
    j["sac"]["target_entropy"] = nullptr;
  j["eval"] = {{"every", eval.every},
               {"episodes", eval.episodes},
               {"bootstrap_replications", eval.bootstrap_replications},
               {"confidence", eval.confidence},
               {"checkpoint_every", eval.checkpoint_every}};
  return j;
}

uint64_t RunConfig::config_hash() const {
  // run_dir is a deployment detail, not part of the experiment identity.
  json j = to_json();
  j.erase("run_dir");
  return fnv1a64(j.dump());
}

RunConfig RunConfig::from_json(const json& j) {
  expect_object(j, "<root>");
  reject_unknown(
      j, {"seed", "run_dir", "agent", "parity", "steps", "env", "arch", "sac",
          "eval"},
      "");

  RunConfig cfg;
  read(j, "parity", cfg.parity);
  if (cfg.parity == "paper") {
    cfg.arch = ArchConfig::paper();
    cfg.sac = SacConfig::paper();
  } else if (cfg.parity != "desk") {
    throw ConfigError("parity must be desk|paper");
  }

  read(j, "seed", cfg.seed);
  read(j, "run_dir", cfg.run_dir);
  if (j.contains("agent"))
    cfg.agent = parse_agent_kind(j.at("agent").get<std::string>());
  read(j, "steps", cfg.steps);
  if (j.contains("arch")) parse_arch(j.at("arch"), cfg.arch);

  // The oracle encoder must emit what the networks consume.
  cfg.env.segment_dim = cfg.arch.segment_dim;
  if (j.contains("env")) parse_env(j.at("env"), cfg.env);
  if (j.contains("sac")) parse_sac(j.at("sac"), cfg.sac);
  if (j.contains("eval")) parse_eval(j.at("eval"), cfg.eval);

  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse error in " + path.string() + ": " +
                      e.what());
  }
  return from_json(j);
}

uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

uint64_t fnv1a64(const std::string& text) {
  return fnv1a64(text.data(), text.size());
}

}  // namespace segrl

#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "segrl/env.hpp"
#include "segrl/learner.hpp"
#include "segrl/policy.hpp"

namespace segrl {

struct EvalConfig {
  long every = 2000;  // env steps between evaluations
  int episodes = 10;
  long bootstrap_replications = 1000;
  double confidence = 0.95;
  long checkpoint_every = 20000;

  void validate() const;
};

// Full run description. parity=paper swaps in the published hyperparameter
// values as the arch/sac defaults before explicit fields are applied.
struct RunConfig {
  uint64_t seed = 1;
  std::string run_dir;
  AgentKind agent = AgentKind::Segment;
  std::string parity = "desk";
  long steps = 60000;
  EnvConfig env;
  ArchConfig arch;
  SacConfig sac;
  EvalConfig eval;

  void validate() const;
  nlohmann::json to_json() const;
  uint64_t config_hash() const;

  // Strict parsing: unknown keys anywhere are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

uint64_t fnv1a64(const void* data, std::size_t size);
uint64_t fnv1a64(const std::string& text);

}  // namespace segrl

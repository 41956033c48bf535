#pragma once

#include <filesystem>
#include <vector>

#include "segrl/env.hpp"
#include "segrl/learner.hpp"
#include "segrl/perception.hpp"
#include "segrl/policy.hpp"
#include "segrl/stats.hpp"

namespace segrl {

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Scene -> segment observation, exactly as the agent sees it: rasterize,
// optionally speckle masks, post-process, patch-embed, extract (or pool
// globally for the baseline agent), attach proprioception, then apply any
// observation-space perturbation.
class ObservationPipeline {
 public:
  ObservationPipeline(const EnvConfig& cfg, AgentKind agent);

  SegmentObservation observe(const SceneState& state,
                             const Perturbation* perturbation = nullptr,
                             uint64_t step_salt = 0) const;

  const PatchEncoder& encoder() const { return encoder_; }
  const EnvConfig& config() const { return cfg_; }

 private:
  EnvConfig cfg_;
  AgentKind agent_;
  PatchEncoder encoder_;
};

// R deterministic full-horizon episodes; returns normalized episode returns
// (sum of rewards / H). Episode e uses env seed derived from (seed, e).
std::vector<double> evaluate(const ModelParams& params, const EnvConfig& env_cfg,
                             int episodes, uint64_t seed,
                             const Perturbation* perturbation = nullptr);

struct PerturbationReport {
  Perturbation perturbation;
  EvalReport report;
  double delta_iqm = 0.0;  // vs the unperturbed report
};

struct RobustnessOptions {
  int episodes = 10;   // rollouts per eval seed
  int eval_seeds = 3;  // strata columns
  long bootstrap_replications = 1000;
  double confidence = 0.95;
};

std::vector<PerturbationReport> robustness_suite(
    const ModelParams& params, const EnvConfig& env_cfg,
    const std::vector<Perturbation>& perturbations, uint64_t seed,
    const RobustnessOptions& options = {});

// One evaluation episode with critic attention capture; one JSON record per
// timestep, weights summing to 1 per step.
nlohmann::json attention_rollout(const ModelParams& params,
                                 const EnvConfig& env_cfg, uint64_t seed);
void export_attention_rollout(const ModelParams& params,
                              const EnvConfig& env_cfg, uint64_t seed,
                              const std::filesystem::path& out_path);

}  // namespace segrl

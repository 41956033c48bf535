#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "segrl/checkpoint.hpp"
#include "segrl/config.hpp"
#include "segrl/eval.hpp"

namespace segrl {

struct EvalPoint {
  long env_step = 0;
  double iqm_return = 0.0;   // IQM over the evaluation rollouts
  double mean_return = 0.0;  // plain mean over the same rollouts
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct TrainCallbacks {
  std::function<void(const UpdateMetrics&)> on_metrics;
  // Return false to stop training early (used by threshold studies).
  std::function<bool(const EvalPoint&)> on_eval;
};

struct TrainResult {
  std::vector<EvalPoint> eval_points;
  std::vector<double> episode_returns;
  long env_steps = 0;
};

// Vectorized collection (sequential workers, merged by index) + SAC updates
// + periodic deterministic evaluation. No filesystem side effects.
TrainResult train_loop(const RunConfig& cfg, Learner& learner,
                       const TrainCallbacks& callbacks = {},
                       long start_step = 0);

// Full run with a run directory: config snapshot, metrics JSONL, eval CSV,
// periodic and final checkpoints, and an exclusive lock file.
TrainResult train_run(const RunConfig& cfg,
                      const std::optional<std::filesystem::path>& resume_from =
                          std::nullopt);

// Matched-seed comparison of the segment agent against the global-pooling
// baseline on the same environment and budget.
struct CompareCurve {
  AgentKind agent = AgentKind::Segment;
  uint64_t seed = 0;
  std::vector<EvalPoint> points;
  long steps_to_threshold = -1;  // -1: never reached within budget
};

struct CompareResult {
  double threshold = 0.0;
  std::vector<CompareCurve> curves;

  std::string to_csv() const;  // agent,seed,env_step,iqm_return,ci_low,ci_high
  long steps_to_threshold(AgentKind agent, uint64_t seed) const;
};

CompareResult compare_agents(const RunConfig& base_cfg, int n_seeds,
                             double threshold, bool stop_at_threshold = true);

// Writes one eval CSV row per point; header per the log contract.
void write_eval_csv(const std::filesystem::path& path, const std::string& agent,
                    uint64_t seed, const std::vector<EvalPoint>& points);

}  // namespace segrl

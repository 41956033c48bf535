#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <vector>

namespace segrl {

// Interquartile mean: sort, discard floor(n/4) from each end, average the
// rest. n < 4 therefore degenerates to the plain mean.
double iqm(const std::vector<double>& values);

struct ConfidenceInterval {
  double low = 0.0;
  double high = 0.0;
};

// Percentile bootstrap of the pooled IQM, resampling seeds within each task
// row (stratum-preserving). Deterministic given seed.
ConfidenceInterval stratified_bootstrap_ci(
    const std::vector<std::vector<double>>& task_scores, long replications,
    double confidence, uint64_t seed);

// Per-task/per-seed normalized scores with the pooled IQM and its CI.
struct EvalReport {
  std::vector<std::vector<double>> scores;  // [task][seed]
  double iqm_value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  nlohmann::json metadata;

  nlohmann::json to_json() const;
};

EvalReport make_eval_report(std::vector<std::vector<double>> scores,
                            long replications, double confidence,
                            uint64_t seed, nlohmann::json metadata = {});

}  // namespace segrl

#include "segrl/stats.hpp"

#include <algorithm>
#include <cmath>

#include "segrl/errors.hpp"
#include "segrl/rng.hpp"

namespace segrl {

namespace {

double percentile(const std::vector<double>& sorted, double q) {
  // Linear interpolation at q*(n-1).
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(pos));
  if (lo == hi) return sorted[lo];
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

double iqm(const std::vector<double>& values) {
  if (values.empty()) throw ContractViolation("iqm: empty input");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t cut = sorted.size() / 4;
  double sum = 0.0;
  for (std::size_t i = cut; i < sorted.size() - cut; ++i) sum += sorted[i];
  return sum / static_cast<double>(sorted.size() - 2 * cut);
}

ConfidenceInterval stratified_bootstrap_ci(
    const std::vector<std::vector<double>>& task_scores, long replications,
    double confidence, uint64_t seed) {
  if (replications < 1)
    throw ContractViolation("bootstrap: replications must be >= 1");
  if (confidence <= 0.0 || confidence >= 1.0)
    throw ContractViolation("bootstrap: confidence must be in (0,1)");
  std::size_t total = 0;
  for (const auto& row : task_scores) {
    if (row.empty()) throw ContractViolation("bootstrap: empty task stratum");
    total += row.size();
  }
  if (total == 0) throw ContractViolation("bootstrap: no scores");

  Rng rng(seed, /*stream=*/0x626f6f74U);  // "boot"
  std::vector<double> stats(static_cast<std::size_t>(replications));
  std::vector<double> pooled(total);
  for (long rep = 0; rep < replications; ++rep) {
    std::size_t k = 0;
    for (const auto& row : task_scores)
      for (std::size_t i = 0; i < row.size(); ++i)
        pooled[k++] = row[rng.uniform_int(row.size())];
    stats[static_cast<std::size_t>(rep)] = iqm(pooled);
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = 1.0 - confidence;
  return {percentile(stats, alpha / 2.0), percentile(stats, 1.0 - alpha / 2.0)};
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json out;
  out["schema"] = "segrl.eval_report.v1";
  out["scores"] = scores;
  out["iqm"] = iqm_value;
  out["ci_low"] = ci_low;
  out["ci_high"] = ci_high;
  out["metadata"] = metadata;
  return out;
}

EvalReport make_eval_report(std::vector<std::vector<double>> scores,
                            long replications, double confidence,
                            uint64_t seed, nlohmann::json metadata) {
  EvalReport report;
  report.scores = std::move(scores);
  std::vector<double> pooled;
  for (const auto& row : report.scores)
    pooled.insert(pooled.end(), row.begin(), row.end());
  report.iqm_value = iqm(pooled);
  auto ci =
      stratified_bootstrap_ci(report.scores, replications, confidence, seed);
  report.ci_low = ci.low;
  report.ci_high = ci.high;
  report.metadata = std::move(metadata);
  report.metadata["small_n"] = pooled.size() < 4;
  report.metadata["bootstrap_replications"] = replications;
  report.metadata["confidence"] = confidence;
  return report;
}

}  // namespace segrl

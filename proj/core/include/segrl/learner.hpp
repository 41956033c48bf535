#pragma once

#include <optional>
#include <vector>

#include "segrl/policy.hpp"
#include "segrl/replay_buffer.hpp"

namespace segrl {

struct SacConfig {
  double gamma = 0.80;
  double tau = 0.01;
  double actor_lr = 3e-4;
  double critic_lr = 5e-4;
  double alpha_lr = 3e-4;
  int batch_size = 128;
  int actor_update_freq = 1;
  int critic_update_freq = 1;
  int target_update_freq = 2;
  std::optional<double> target_entropy;  // defaults to -action_dim
  int updates_per_step = 1;              // gradient updates per vector env step
  int num_envs = 4;
  int warmup_steps = 1000;               // uniform-random env steps
  std::size_t replay_capacity = 200000;

  void validate() const;
  static SacConfig desk();
  static SacConfig paper();
};

// y = r + gamma * (1 - done) * (min_q_next - alpha * log_pi_next)
double bellman_target(double reward, bool done, double min_q_next,
                      double alpha_log_prob_next, double gamma);

struct UpdateMetrics {
  long env_steps = 0;
  long update_count = 0;
  int updates_applied = 0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double q1_mean = 0.0;
  double q1_std = 0.0;
  std::size_t buffer_size = 0;
};

class Learner {
 public:
  Learner(ModelParams params, SacConfig cfg, uint64_t seed);

  // One collection step's transitions in, the configured number of gradient
  // updates out (after warmup).
  UpdateMetrics train_step(const std::vector<Transition>& transitions);

  double critic_update(const std::vector<Transition>& batch);
  double actor_update(const std::vector<Transition>& batch);
  std::pair<double, double> temperature_update(
      const std::vector<Transition>& batch);  // (loss, alpha)
  void update_targets();

  double alpha() const;
  double target_entropy() const { return target_entropy_; }
  bool in_warmup() const { return env_steps_ < cfg_.warmup_steps; }
  long env_steps() const { return env_steps_; }
  long update_count() const { return update_count_; }

  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  ReplayBuffer& buffer() { return buffer_; }
  const SacConfig& config() const { return cfg_; }
  Rng& rng() { return rng_; }

 private:
  PackedBatch pack_current(const std::vector<Transition>& batch) const;
  PackedBatch pack_next(const std::vector<Transition>& batch) const;

  ModelParams params_;
  SacConfig cfg_;
  ReplayBuffer buffer_;
  Adam actor_opt_;
  Adam critic_opt_;
  Adam alpha_opt_;
  Rng rng_;
  double target_entropy_ = 0.0;
  long update_count_ = 0;
  long env_steps_ = 0;
  double last_q1_mean_ = 0.0;
  double last_q1_std_ = 0.0;
};

}  // namespace segrl

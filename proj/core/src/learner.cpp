#include "segrl/learner.hpp"

#include <cmath>
#include <sstream>

#include "segrl/errors.hpp"

namespace segrl {

namespace {

void check_finite_loss(double loss, const char* what) {
  if (!std::isfinite(loss)) {
    std::ostringstream msg;
    msg << "training fault: non-finite " << what << " loss (" << loss << ")";
    throw TrainingFault(msg.str());
  }
}

}  // namespace

void SacConfig::validate() const {
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("sac.gamma must be in [0,1]");
  if (tau <= 0.0 || tau > 1.0) throw ConfigError("sac.tau must be in (0,1]");
  if (actor_lr <= 0.0 || critic_lr <= 0.0 || alpha_lr <= 0.0)
    throw ConfigError("sac learning rates must be > 0");
  if (batch_size < 1) throw ConfigError("sac.batch_size must be >= 1");
  if (actor_update_freq < 1 || critic_update_freq < 1 || target_update_freq < 1)
    throw ConfigError("sac update frequencies must be >= 1");
  if (updates_per_step < 1) throw ConfigError("sac.updates_per_step must be >= 1");
  if (num_envs < 1) throw ConfigError("sac.num_envs must be >= 1");
  if (warmup_steps < 0) throw ConfigError("sac.warmup_steps must be >= 0");
  if (replay_capacity < 1) throw ConfigError("sac.replay_capacity must be >= 1");
}

SacConfig SacConfig::desk() { return SacConfig{}; }

SacConfig SacConfig::paper() {
  SacConfig cfg;
  cfg.replay_capacity = 1000000;
  cfg.num_envs = 20;
  cfg.updates_per_step = 5;  // UTD 0.25 at 20 envs
  return cfg;
}

double bellman_target(double reward, bool done, double min_q_next,
                      double alpha_log_prob_next, double gamma) {
  if (done) return reward;
  return reward + gamma * (min_q_next - alpha_log_prob_next);
}

Learner::Learner(ModelParams params, SacConfig cfg, uint64_t seed)
    : params_(std::move(params)),
      cfg_(cfg),
      buffer_(cfg.replay_capacity),
      rng_(seed, /*stream=*/0x6c65726eU) {
  cfg_.validate();
  target_entropy_ =
      cfg_.target_entropy.value_or(-static_cast<double>(params_.arch.action_dim));

  std::vector<int> critic_ids = params_.store.ids_with_prefix("critic1");
  for (int id : params_.store.ids_with_prefix("critic2")) critic_ids.push_back(id);
  actor_opt_ = Adam(params_.store.ids_with_prefix("actor"), cfg_.actor_lr);
  critic_opt_ = Adam(critic_ids, cfg_.critic_lr);
  alpha_opt_ = Adam({params_.store.require("log_alpha")}, cfg_.alpha_lr);
}

double Learner::alpha() const {
  return std::exp(static_cast<double>(params_.store.value("log_alpha")(0, 0)));
}

PackedBatch Learner::pack_current(const std::vector<Transition>& batch) const {
  std::vector<SegmentObservation> obs;
  obs.reserve(batch.size());
  for (const auto& t : batch) obs.push_back(t.obs);
  PackedBatch packed = pack(obs);
  packed.actions.resize(static_cast<Eigen::Index>(batch.size()),
                        params_.arch.action_dim);
  for (std::size_t i = 0; i < batch.size(); ++i)
    packed.actions.row(static_cast<Eigen::Index>(i)) = batch[i].action.transpose();
  return packed;
}

PackedBatch Learner::pack_next(const std::vector<Transition>& batch) const {
  std::vector<SegmentObservation> obs;
  obs.reserve(batch.size());
  for (const auto& t : batch) obs.push_back(t.next_obs);
  return pack(obs);
}

double Learner::critic_update(const std::vector<Transition>& batch) {
  const int b = static_cast<int>(batch.size());
  const double alpha_now = alpha();

  // Target values: fresh next-state actions from the current actor, twin
  // target critics, no gradient flow anywhere in this block.
  MatF targets(b, 1);
  {
    Tape<float> tape;
    PackedBatch next = pack_next(batch);
    ForwardOptions<float> opt;
    opt.trainable = false;
    auto pi = actor_forward(tape, params_, next, opt);
    MatF eps(b, params_.arch.action_dim);
    for (Eigen::Index r = 0; r < eps.rows(); ++r)
      for (Eigen::Index c = 0; c < eps.cols(); ++c)
        eps(r, c) = static_cast<float>(rng_.normal());
    auto sample = sample_action_tape(tape, pi.mean, pi.log_std, eps);

    PackedBatch next_q = next;
    next_q.actions = tape.val(sample.action);
    ForwardOptions<float> topt;
    topt.trainable = false;
    topt.use_targets = true;
    auto target_q = critic_forward(tape, params_, next_q, topt);
    const MatF& q1 = tape.val(target_q.q1);
    const MatF& q2 = tape.val(target_q.q2);
    const MatF& logp = tape.val(sample.log_prob);
    for (int i = 0; i < b; ++i) {
      const double min_q = std::min(q1(i, 0), q2(i, 0));
      targets(i, 0) = static_cast<float>(
          bellman_target(batch[i].reward, batch[i].done, min_q,
                         alpha_now * logp(i, 0), cfg_.gamma));
    }
  }

  Tape<float> tape;
  PackedBatch current = pack_current(batch);
  ForwardOptions<float> opt;
  opt.trainable = true;
  auto q = critic_forward(tape, params_, current, opt);
  {
    const MatF& q1v = tape.val(q.q1);
    last_q1_mean_ = q1v.mean();
    last_q1_std_ = b > 1 ? std::sqrt((q1v.array() - q1v.mean()).square().sum() /
                                     (q1v.size() - 1))
                         : 0.0;
  }
  auto y = tape.constant(targets);
  auto d1 = tape.sub(q.q1, y);
  auto d2 = tape.sub(q.q2, y);
  auto loss = tape.add(tape.mean_all(tape.mul(d1, d1)),
                       tape.mean_all(tape.mul(d2, d2)));
  const double loss_value = tape.val(loss)(0, 0);
  check_finite_loss(loss_value, "critic");
  tape.backward(loss);
  critic_opt_.step(params_.store, q.bound, tape);
  return loss_value;
}

double Learner::actor_update(const std::vector<Transition>& batch) {
  const int b = static_cast<int>(batch.size());
  const double alpha_now = alpha();

  Tape<float> tape;
  PackedBatch current = pack_current(batch);
  ForwardOptions<float> aopt;
  aopt.trainable = true;
  auto pi = actor_forward(tape, params_, current, aopt);

  MatF eps(b, params_.arch.action_dim);
  for (Eigen::Index r = 0; r < eps.rows(); ++r)
    for (Eigen::Index c = 0; c < eps.cols(); ++c)
      eps(r, c) = static_cast<float>(rng_.normal());
  auto sample = sample_action_tape(tape, pi.mean, pi.log_std, eps);

  ForwardOptions<float> copt;
  copt.trainable = false;  // critic frozen; gradients flow through activations
  copt.actions_var = sample.action;
  auto q = critic_forward(tape, params_, current, copt);

  auto min_q = tape.min_elt(q.q1, q.q2);
  auto loss = tape.mean_all(
      tape.sub(tape.scale(sample.log_prob, static_cast<float>(alpha_now)),
               min_q));
  const double loss_value = tape.val(loss)(0, 0);
  check_finite_loss(loss_value, "actor");
  tape.backward(loss);
  actor_opt_.step(params_.store, pi.bound, tape);
  return loss_value;
}

std::pair<double, double> Learner::temperature_update(
    const std::vector<Transition>& batch) {
  const int b = static_cast<int>(batch.size());

  double mean_term;
  {
    Tape<float> tape;
    PackedBatch current = pack_current(batch);
    ForwardOptions<float> opt;
    opt.trainable = false;
    auto pi = actor_forward(tape, params_, current, opt);
    MatF eps(b, params_.arch.action_dim);
    for (Eigen::Index r = 0; r < eps.rows(); ++r)
      for (Eigen::Index c = 0; c < eps.cols(); ++c)
        eps(r, c) = static_cast<float>(rng_.normal());
    auto sample = sample_action_tape(tape, pi.mean, pi.log_std, eps);
    mean_term = tape.val(sample.log_prob).mean() + target_entropy_;
  }

  Tape<float> tape;
  BoundParams<float> bound;
  auto log_alpha = tape.leaf(params_.store.value("log_alpha"));
  bound.items.push_back({params_.store.require("log_alpha"), log_alpha});
  auto loss = tape.scale(tape.exp_op(log_alpha),
                         static_cast<float>(-mean_term));
  const double loss_value = tape.val(loss)(0, 0);
  check_finite_loss(loss_value, "temperature");
  tape.backward(loss);
  alpha_opt_.step(params_.store, bound, tape);
  return {loss_value, alpha()};
}

void Learner::update_targets() {
  soft_update<float>(params_.store, "critic1", "target_critic1",
                     static_cast<float>(cfg_.tau));
  soft_update<float>(params_.store, "critic2", "target_critic2",
                     static_cast<float>(cfg_.tau));
}

UpdateMetrics Learner::train_step(const std::vector<Transition>& transitions) {
  for (const auto& t : transitions) buffer_.add(t);
  env_steps_ += static_cast<long>(transitions.size());

  UpdateMetrics metrics;
  metrics.env_steps = env_steps_;
  metrics.buffer_size = buffer_.size();
  metrics.alpha = alpha();

  const bool ready = env_steps_ >= cfg_.warmup_steps &&
                     buffer_.size() >= static_cast<std::size_t>(cfg_.batch_size);
  if (!ready) {
    metrics.update_count = update_count_;
    return metrics;
  }

  for (int u = 0; u < cfg_.updates_per_step; ++u) {
    ++update_count_;
    auto batch = buffer_.sample(static_cast<std::size_t>(cfg_.batch_size), rng_);
    if (update_count_ % cfg_.critic_update_freq == 0)
      metrics.critic_loss = critic_update(batch);
    if (update_count_ % cfg_.actor_update_freq == 0) {
      metrics.actor_loss = actor_update(batch);
      auto [alpha_loss, alpha_now] = temperature_update(batch);
      metrics.alpha_loss = alpha_loss;
      metrics.alpha = alpha_now;
    }
    if (update_count_ % cfg_.target_update_freq == 0) update_targets();
    ++metrics.updates_applied;
  }
  metrics.q1_mean = last_q1_mean_;
  metrics.q1_std = last_q1_std_;
  metrics.update_count = update_count_;
  metrics.buffer_size = buffer_.size();
  return metrics;
}

}  // namespace segrl

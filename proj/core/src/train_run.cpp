#include "segrl/train_run.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

#include "segrl/errors.hpp"

namespace segrl {

namespace {

// One environment worker: owns its env instance and the current observation.
struct EnvWorker {
  SceneState state;
  SegmentObservation obs;
  double episode_reward = 0.0;
  long episode_index = 0;
};

uint64_t worker_episode_seed(uint64_t run_seed, int worker, long episode) {
  return hash_combine(hash_combine(run_seed, 0x656e7673U + worker), episode);
}

class Collector {
 public:
  Collector(const RunConfig& cfg, AgentKind agent)
      : cfg_(cfg),
        pipeline_(cfg.env, agent),
        action_rng_(hash_combine(cfg.seed, 0x636f6c6cU)) {
    workers_.resize(cfg.sac.num_envs);
    for (int w = 0; w < cfg.sac.num_envs; ++w) reset_worker(w);
  }

  // Steps every worker once; returns the transitions in worker order.
  std::vector<Transition> step(const ModelParams& params, bool warmup,
                               std::vector<double>* finished_returns) {
    std::vector<Transition> transitions;
    transitions.reserve(workers_.size());
    for (std::size_t w = 0; w < workers_.size(); ++w) {
      EnvWorker& worker = workers_[w];
      Eigen::VectorXf action(kActionDim);
      if (warmup) {
        for (int i = 0; i < kActionDim; ++i)
          action[i] = static_cast<float>(action_rng_.uniform(-1.0, 1.0));
      } else {
        PolicyOutput out = policy_output(params, worker.obs);
        action = sample_action(out.mean, out.log_std, action_rng_).first;
      }

      StepResult step = env_step(cfg_.env, worker.state, action);
      SegmentObservation next_obs = pipeline_.observe(step.state);

      Transition t;
      t.obs = worker.obs;
      t.action = action;
      t.reward = step.reward;
      t.done = step.done;
      t.next_obs = next_obs;
      transitions.push_back(std::move(t));

      worker.episode_reward += step.reward;
      if (step.done) {
        if (finished_returns)
          finished_returns->push_back(worker.episode_reward / cfg_.env.horizon);
        ++worker.episode_index;
        reset_worker(static_cast<int>(w));
      } else {
        worker.state = std::move(step.state);
        worker.obs = std::move(next_obs);
      }
    }
    return transitions;
  }

 private:
  void reset_worker(int w) {
    workers_[w].state = env_reset(
        cfg_.env, worker_episode_seed(cfg_.seed, w, workers_[w].episode_index));
    workers_[w].obs = pipeline_.observe(workers_[w].state);
    workers_[w].episode_reward = 0.0;
  }

  const RunConfig& cfg_;
  ObservationPipeline pipeline_;
  Rng action_rng_;
  std::vector<EnvWorker> workers_;
};

EvalPoint run_eval_point(const RunConfig& cfg, const ModelParams& params,
                         long env_step, long eval_index) {
  const uint64_t eval_seed =
      hash_combine(hash_combine(cfg.seed, 0x6576616cU), eval_index);
  std::vector<double> returns =
      evaluate(params, cfg.env, cfg.eval.episodes, eval_seed);
  EvalPoint point;
  point.env_step = env_step;
  point.iqm_return = iqm(returns);
  double total = 0.0;
  for (double r : returns) total += r;
  point.mean_return = returns.empty() ? 0.0 : total / returns.size();
  auto ci = stratified_bootstrap_ci({returns}, cfg.eval.bootstrap_replications,
                                    cfg.eval.confidence, eval_seed);
  point.ci_low = ci.low;
  point.ci_high = ci.high;
  return point;
}

// Exclusive run-directory lock; freed on destruction.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir)
      : path_(dir / "run.lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw IoError("run directory is locked by another writer: " +
                    path_.string());
    std::string pid = std::to_string(::getpid()) + "\n";
    (void)!::write(fd_, pid.data(), pid.size());
  }
  ~RunLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

}  // namespace

TrainResult train_loop(const RunConfig& cfg, Learner& learner,
                       const TrainCallbacks& callbacks, long start_step) {
  cfg.validate();
  Collector collector(cfg, learner.params().agent);

  TrainResult result;
  long env_steps = start_step;
  long next_eval = ((start_step / cfg.eval.every) + 1) * cfg.eval.every;
  long eval_index = start_step / cfg.eval.every;
  const long step_budget = start_step + cfg.steps;

  while (env_steps < step_budget) {
    auto transitions = collector.step(learner.params(), learner.in_warmup(),
                                      &result.episode_returns);
    env_steps += static_cast<long>(transitions.size());
    UpdateMetrics metrics = learner.train_step(transitions);
    metrics.env_steps = env_steps;
    if (callbacks.on_metrics) callbacks.on_metrics(metrics);

    if (env_steps >= next_eval) {
      EvalPoint point = run_eval_point(cfg, learner.params(), env_steps,
                                       eval_index++);
      result.eval_points.push_back(point);
      next_eval += cfg.eval.every;
      if (callbacks.on_eval && !callbacks.on_eval(point)) break;
    }
  }
  result.env_steps = env_steps;
  return result;
}

void write_eval_csv(const std::filesystem::path& path, const std::string& agent,
                    uint64_t seed, const std::vector<EvalPoint>& points) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write eval csv: " + path.string());
  out << "agent,seed,env_step,iqm_return,ci_low,ci_high\n";
  std::ostringstream rows;
  rows.precision(17);
  for (const auto& p : points)
    rows << agent << "," << seed << "," << p.env_step << "," << p.iqm_return
         << "," << p.ci_low << "," << p.ci_high << "\n";
  out << rows.str();
  if (!out) throw IoError("short write to " + path.string());
}

TrainResult train_run(const RunConfig& cfg,
                      const std::optional<std::filesystem::path>& resume_from) {
  cfg.validate();
  if (cfg.run_dir.empty()) throw ConfigError("run_dir is required");

  const std::filesystem::path dir(cfg.run_dir);
  std::filesystem::create_directories(dir / "checkpoints");
  RunLock lock(dir);

  {
    std::ofstream snapshot(dir / "config.json");
    if (!snapshot) throw IoError("cannot write config snapshot");
    snapshot << cfg.to_json().dump(2) << "\n";
  }

  ModelParams params = init_params<float>(cfg.arch, cfg.agent, cfg.seed);
  long start_step = 0;
  if (resume_from) start_step = load_checkpoint_into(params, *resume_from);

  Learner learner(std::move(params), cfg.sac, cfg.seed);

  std::ofstream metrics_out(dir / "metrics.jsonl");
  if (!metrics_out) throw IoError("cannot write metrics.jsonl");
  metrics_out << nlohmann::json{{"schema", "segrl.metrics.v1"}}.dump() << "\n";

  std::vector<EvalPoint> points;
  long last_checkpoint = start_step;

  TrainCallbacks callbacks;
  callbacks.on_metrics = [&](const UpdateMetrics& m) {
    nlohmann::json row;
    row["env_step"] = m.env_steps;
    row["update_count"] = m.update_count;
    row["critic_loss"] = m.critic_loss;
    row["actor_loss"] = m.actor_loss;
    row["alpha_loss"] = m.alpha_loss;
    row["alpha"] = m.alpha;
    row["q1_mean"] = m.q1_mean;
    row["q1_std"] = m.q1_std;
    row["buffer_size"] = m.buffer_size;
    metrics_out << row.dump() << "\n";
  };
  callbacks.on_eval = [&](const EvalPoint& point) {
    points.push_back(point);
    write_eval_csv(dir / "eval.csv", to_string(cfg.agent), cfg.seed, points);
    if (point.env_step - last_checkpoint >= cfg.eval.checkpoint_every) {
      save_checkpoint(learner.params(), point.env_step, cfg,
                      dir / "checkpoints" /
                          ("ckpt_" + std::to_string(point.env_step) + ".ckpt"));
      last_checkpoint = point.env_step;
    }
    return true;
  };

  TrainResult result = train_loop(cfg, learner, callbacks, start_step);
  result.eval_points = points;

  save_checkpoint(learner.params(), result.env_steps, cfg,
                  dir / "checkpoints" / "final.ckpt");
  write_eval_csv(dir / "eval.csv", to_string(cfg.agent), cfg.seed, points);
  return result;
}

long CompareResult::steps_to_threshold(AgentKind agent, uint64_t seed) const {
  for (const auto& curve : curves)
    if (curve.agent == agent && curve.seed == seed)
      return curve.steps_to_threshold;
  return -1;
}

std::string CompareResult::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "agent,seed,env_step,iqm_return,ci_low,ci_high\n";
  for (const auto& curve : curves)
    for (const auto& p : curve.points)
      out << to_string(curve.agent) << "," << curve.seed << "," << p.env_step
          << "," << p.iqm_return << "," << p.ci_low << "," << p.ci_high << "\n";
  return out.str();
}

CompareResult compare_agents(const RunConfig& base_cfg, int n_seeds,
                             double threshold, bool stop_at_threshold) {
  CompareResult result;
  result.threshold = threshold;
  for (AgentKind agent : {AgentKind::Segment, AgentKind::GlobalBaseline}) {
    for (int s = 0; s < n_seeds; ++s) {
      RunConfig cfg = base_cfg;
      cfg.agent = agent;
      cfg.seed = hash_combine(base_cfg.seed, s);

      CompareCurve curve;
      curve.agent = agent;
      curve.seed = cfg.seed;

      Learner learner(init_params<float>(cfg.arch, cfg.agent, cfg.seed),
                      cfg.sac, cfg.seed);
      TrainCallbacks callbacks;
      callbacks.on_eval = [&](const EvalPoint& point) {
        curve.points.push_back(point);
        if (curve.steps_to_threshold < 0 && point.iqm_return >= threshold)
          curve.steps_to_threshold = point.env_step;
        return !(stop_at_threshold && curve.steps_to_threshold >= 0);
      };
      train_loop(cfg, learner, callbacks);
      result.curves.push_back(std::move(curve));
    }
  }
  return result;
}

}  // namespace segrl

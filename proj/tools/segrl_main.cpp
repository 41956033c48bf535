#include <CLI11.hpp>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "segrl/checkpoint.hpp"
#include "segrl/errors.hpp"
#include "segrl/eval.hpp"
#include "segrl/train_run.hpp"

namespace {

using namespace segrl;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitTrainingFault = 3;
constexpr int kExitCheckpoint = 4;

struct EnvOverrides {
  std::optional<std::string> task;
  std::optional<int> horizon;
  std::optional<int> distractors_min;
  std::optional<int> distractors_max;
  std::optional<bool> include_background;
  std::optional<double> teleport_prob;

  void apply(EnvConfig& env) const {
    if (task) env.task = parse_task(*task);
    if (horizon) env.horizon = *horizon;
    if (distractors_min) env.distractors_min = *distractors_min;
    if (distractors_max) env.distractors_max = *distractors_max;
    if (include_background) env.include_background = *include_background;
    if (teleport_prob) env.teleport_prob = *teleport_prob;
    env.validate();
  }

  void attach(CLI::App* cmd) {
    cmd->add_option("--task", task, "Override task (reach|push)");
    cmd->add_option("--horizon", horizon, "Override episode horizon");
    cmd->add_option("--distractors-min", distractors_min);
    cmd->add_option("--distractors-max", distractors_max);
    cmd->add_option("--include-background", include_background);
    cmd->add_option("--teleport-prob", teleport_prob);
  }
};

std::vector<std::vector<double>> read_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scores file: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("task,seed,score", 0) != 0)
    throw ConfigError("scores csv must start with header 'task,seed,score'");

  std::vector<std::string> task_order;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string task, seed, score;
    if (!std::getline(ls, task, ',') || !std::getline(ls, seed, ',') ||
        !std::getline(ls, score))
      throw ConfigError("malformed scores row: " + line);
    std::size_t t = 0;
    for (; t < task_order.size(); ++t)
      if (task_order[t] == task) break;
    if (t == task_order.size()) {
      task_order.push_back(task);
      rows.emplace_back();
    }
    rows[t].push_back(std::stod(score));
  }
  if (rows.empty()) throw ConfigError("scores csv has no data rows");
  return rows;
}

int cmd_train(const std::string& config_path, std::optional<uint64_t> seed,
              std::optional<long> steps, std::optional<std::string> run_dir,
              std::optional<std::string> resume) {
  RunConfig cfg = RunConfig::load(config_path);
  if (seed) cfg.seed = *seed;
  if (steps) cfg.steps = *steps;
  if (run_dir) cfg.run_dir = *run_dir;
  if (cfg.run_dir.empty()) {
    if (const char* env_dir = std::getenv("SEGRL_RUN_DIR")) cfg.run_dir = env_dir;
  }
  cfg.validate();

  std::optional<std::filesystem::path> resume_path;
  if (resume) resume_path = *resume;
  TrainResult result = train_run(cfg, resume_path);
  std::cout << "trained " << result.env_steps << " env steps, "
            << result.eval_points.size() << " eval points, run dir "
            << cfg.run_dir << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, int episodes, uint64_t seed,
             const EnvOverrides& overrides, const std::string& out_path,
             long reps, double confidence) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  EnvConfig env = ckpt.config.env;
  overrides.apply(env);

  std::vector<double> returns = evaluate(ckpt.params, env, episodes, seed);
  nlohmann::json meta{{"checkpoint", ckpt_path},
                      {"step", ckpt.step},
                      {"task", to_string(env.task)},
                      {"episodes", episodes},
                      {"seed", seed}};
  EvalReport report =
      make_eval_report({returns}, reps, confidence, seed, meta);
  nlohmann::json out = report.to_json();
  out["returns"] = returns;
  std::cout << out.dump(2) << "\n";
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write " + out_path);
    f << out.dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_perturb(const std::string& ckpt_path, const std::string& suite_path,
                int episodes, int eval_seeds, uint64_t seed,
                const std::string& out_path) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);

  std::ifstream in(suite_path);
  if (!in) throw ConfigError("cannot open suite file: " + suite_path);
  nlohmann::json suite;
  in >> suite;
  if (!suite.is_array())
    throw ConfigError("suite file must be a JSON array of perturbation specs");
  std::vector<Perturbation> perturbations;
  for (const auto& item : suite)
    perturbations.push_back(parse_perturbation(item.get<std::string>()));

  RobustnessOptions options;
  options.episodes = episodes;
  options.eval_seeds = eval_seeds;
  auto reports =
      robustness_suite(ckpt.params, ckpt.config.env, perturbations, seed, options);

  nlohmann::json out = nlohmann::json::array();
  for (const auto& entry : reports) {
    nlohmann::json j = entry.report.to_json();
    j["perturbation"] = entry.perturbation.describe();
    j["delta_iqm"] = entry.delta_iqm;
    out.push_back(std::move(j));
  }
  std::cout << out.dump(2) << "\n";
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write " + out_path);
    f << out.dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_attn(const std::string& ckpt_path, const std::string& out_path,
             uint64_t seed) {
  LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
  export_attention_rollout(ckpt.params, ckpt.config.env, seed, out_path);
  std::cout << "wrote attention trace to " << out_path << "\n";
  return kExitOk;
}

int cmd_stats(const std::string& scores_path, long reps, double confidence,
              uint64_t seed, const std::string& out_path) {
  auto scores = read_scores_csv(scores_path);
  EvalReport report = make_eval_report(scores, reps, confidence, seed,
                                       {{"scores_file", scores_path}});
  std::cout.precision(17);
  std::cout << "iqm=" << report.iqm_value << " ci_low=" << report.ci_low
            << " ci_high=" << report.ci_high << " reps=" << reps
            << " confidence=" << confidence << "\n";
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write " + out_path);
    f << report.to_json().dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_compare(const std::string& config_path, int seeds, double threshold,
                const std::string& out_path) {
  RunConfig cfg = RunConfig::load(config_path);
  CompareResult result = compare_agents(cfg, seeds, threshold);
  std::string csv = result.to_csv();
  std::cout << csv;
  for (const auto& curve : result.curves)
    std::cerr << to_string(curve.agent) << " seed=" << curve.seed
              << " steps_to_threshold=" << curve.steps_to_threshold << "\n";
  if (!out_path.empty()) {
    std::ofstream f(out_path);
    if (!f) throw IoError("cannot write " + out_path);
    f << csv;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segrl: segment-token actor-critic on oracle-segmented toy control"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train an agent from a config");
  std::string train_config;
  std::optional<uint64_t> train_seed;
  std::optional<long> train_steps;
  std::optional<std::string> train_run_dir, train_resume;
  train->add_option("--config", train_config, "Run config JSON")->required();
  train->add_option("--seed", train_seed, "Override config seed");
  train->add_option("--steps", train_steps, "Override env-step budget");
  train->add_option("--run-dir", train_run_dir,
                    "Run directory (default: config or $SEGRL_RUN_DIR)");
  train->add_option("--resume", train_resume, "Checkpoint to resume from");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ckpt, eval_out;
  int eval_episodes = 10;
  uint64_t eval_seed = 1234;
  long eval_reps = 1000;
  double eval_conf = 0.95;
  EnvOverrides eval_env;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
  eval_cmd->add_option("--episodes", eval_episodes);
  eval_cmd->add_option("--seed", eval_seed);
  eval_cmd->add_option("--out", eval_out, "Also write the report JSON here");
  eval_cmd->add_option("--reps", eval_reps, "Bootstrap replications");
  eval_cmd->add_option("--confidence", eval_conf);
  eval_env.attach(eval_cmd);

  // perturb
  auto* perturb = app.add_subcommand("perturb", "Run the robustness suite");
  std::string pert_ckpt, pert_suite, pert_out;
  int pert_episodes = 10, pert_eval_seeds = 3;
  uint64_t pert_seed = 1234;
  perturb->add_option("--checkpoint", pert_ckpt)->required();
  perturb->add_option("--suite", pert_suite, "JSON array of perturbation specs")
      ->required();
  perturb->add_option("--episodes", pert_episodes);
  perturb->add_option("--eval-seeds", pert_eval_seeds);
  perturb->add_option("--seed", pert_seed);
  perturb->add_option("--out", pert_out);

  // attn
  auto* attn = app.add_subcommand("attn", "Export a critic attention trace");
  std::string attn_ckpt, attn_out;
  uint64_t attn_seed = 1234;
  attn->add_option("--checkpoint", attn_ckpt)->required();
  attn->add_option("--out", attn_out)->required();
  attn->add_option("--seed", attn_seed);

  // stats
  auto* stats = app.add_subcommand("stats", "IQM + stratified bootstrap CI");
  std::string stats_scores, stats_out;
  long stats_reps = 50000;
  double stats_conf = 0.95;
  uint64_t stats_seed = 1;
  stats->add_option("scores", stats_scores, "CSV with header task,seed,score")
      ->required();
  stats->add_option("--reps", stats_reps);
  stats->add_option("--confidence", stats_conf);
  stats->add_option("--seed", stats_seed);
  stats->add_option("--out", stats_out);

  // compare
  auto* compare = app.add_subcommand(
      "compare", "Segment agent vs global baseline, matched seeds");
  std::string cmp_config, cmp_out;
  int cmp_seeds = 5;
  double cmp_threshold = 0.7;
  compare->add_option("--config", cmp_config)->required();
  compare->add_option("--seeds", cmp_seeds);
  compare->add_option("--threshold", cmp_threshold);
  compare->add_option("--out", cmp_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train)
      return cmd_train(train_config, train_seed, train_steps, train_run_dir,
                       train_resume);
    if (*eval_cmd)
      return cmd_eval(eval_ckpt, eval_episodes, eval_seed, eval_env, eval_out,
                      eval_reps, eval_conf);
    if (*perturb)
      return cmd_perturb(pert_ckpt, pert_suite, pert_episodes, pert_eval_seeds,
                         pert_seed, pert_out);
    if (*attn) return cmd_attn(attn_ckpt, attn_out, attn_seed);
    if (*stats)
      return cmd_stats(stats_scores, stats_reps, stats_conf, stats_seed,
                       stats_out);
    if (*compare) return cmd_compare(cmp_config, cmp_seeds, cmp_threshold, cmp_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TrainingFault& e) {
    std::cerr << "training fault: " << e.what() << "\n";
    return kExitTrainingFault;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

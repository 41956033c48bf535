#include "segrl/eval.hpp"

#include <fstream>

#include "segrl/errors.hpp"

namespace segrl {

ObservationPipeline::ObservationPipeline(const EnvConfig& cfg, AgentKind agent)
    : cfg_(cfg),
      agent_(agent),
      encoder_(cfg.segment_dim, cfg.patch_size, cfg.encoder_seed) {
  cfg_.validate();
}

SegmentObservation ObservationPipeline::observe(
    const SceneState& state, const Perturbation* perturbation,
    uint64_t step_salt) const {
  RenderResult rendered = rasterize(cfg_, state);

  InstanceMasks masks = std::move(rendered.masks);
  if (perturbation && perturbation->applies_to_masks())
    masks = perturb_masks(masks, *perturbation, step_salt);
  masks = post_process_masks(masks, cfg_.post_process_kernel);

  PatchGrid grid = patch_embed(rendered.image, encoder_);

  SegmentObservation obs;
  if (agent_ == AgentKind::Segment) {
    obs = extract_segment_embeddings(masks, grid, cfg_.min_pixels);
  } else {
    obs.embeddings = global_encode(grid).transpose();
    obs.bboxes = MatF(1, 4);
    obs.bboxes << 0.0f, 0.0f, 1.0f, 1.0f;
    obs.labels = {EntityLabel::Background};
  }
  obs.proprio = state.effector_pos;

  if (perturbation && !perturbation->applies_to_masks() &&
      perturbation->kind != Perturbation::Kind::Identity)
    obs = perturb_observation(obs, *perturbation, step_salt);
  return obs;
}

std::vector<double> evaluate(const ModelParams& params, const EnvConfig& env_cfg,
                             int episodes, uint64_t seed,
                             const Perturbation* perturbation) {
  ObservationPipeline pipeline(env_cfg, params.agent);
  std::vector<double> returns;
  returns.reserve(std::max(episodes, 0));
  for (int ep = 0; ep < episodes; ++ep) {
    SceneState state = env_reset(env_cfg, hash_combine(seed, ep));
    double total = 0.0;
    for (int t = 0; t < env_cfg.horizon; ++t) {
      const uint64_t salt = hash_combine(ep, t);
      SegmentObservation obs = pipeline.observe(state, perturbation, salt);
      Eigen::VectorXf action =
          deterministic_action(policy_output(params, obs).mean);
      StepResult step = env_step(env_cfg, state, action);
      total += step.reward;
      state = std::move(step.state);
      if (step.done) break;
    }
    returns.push_back(total / env_cfg.horizon);
  }
  return returns;
}

std::vector<PerturbationReport> robustness_suite(
    const ModelParams& params, const EnvConfig& env_cfg,
    const std::vector<Perturbation>& perturbations, uint64_t seed,
    const RobustnessOptions& options) {
  auto run = [&](const Perturbation* pert) {
    std::vector<std::vector<double>> scores(1);
    for (int s = 0; s < options.eval_seeds; ++s) {
      std::vector<double> rets = evaluate(params, env_cfg, options.episodes,
                                          hash_combine(seed, s), pert);
      double mean = 0.0;
      for (double r : rets) mean += r;
      scores[0].push_back(rets.empty() ? 0.0 : mean / rets.size());
    }
    return scores;
  };

  nlohmann::json base_meta;
  base_meta["env"] = to_string(env_cfg.task);
  EvalReport baseline = make_eval_report(run(nullptr),
                                         options.bootstrap_replications,
                                         options.confidence, seed, base_meta);

  std::vector<PerturbationReport> reports;
  for (const auto& pert : perturbations) {
    pert.validate();
    nlohmann::json meta = base_meta;
    meta["perturbation"] = pert.describe();
    PerturbationReport entry;
    entry.perturbation = pert;
    entry.report = make_eval_report(run(&pert), options.bootstrap_replications,
                                    options.confidence, seed, meta);
    entry.delta_iqm = entry.report.iqm_value - baseline.iqm_value;
    reports.push_back(std::move(entry));
  }
  return reports;
}

nlohmann::json attention_rollout(const ModelParams& params,
                                 const EnvConfig& env_cfg, uint64_t seed) {
  ObservationPipeline pipeline(env_cfg, params.agent);
  SceneState state = env_reset(env_cfg, seed);

  nlohmann::json records = nlohmann::json::array();
  for (int t = 0; t < env_cfg.horizon; ++t) {
    SegmentObservation obs = pipeline.observe(state);
    Eigen::VectorXf action =
        deterministic_action(policy_output(params, obs).mean);
    AttentionRecord record = critic_attention(params, obs, action);
    const auto& steps = attention_weights(record);

    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& entry : steps.at(0)) {
      nlohmann::json token;
      token["role"] = entry.role;
      if (entry.bbox) {
        token["bbox"] = {(*entry.bbox)[0], (*entry.bbox)[1], (*entry.bbox)[2],
                         (*entry.bbox)[3]};
      } else {
        token["bbox"] = nullptr;
      }
      token["weight"] = entry.weight;
      tokens.push_back(std::move(token));
    }
    nlohmann::json rec;
    rec["step"] = t;
    rec["tokens"] = std::move(tokens);
    records.push_back(std::move(rec));

    StepResult step = env_step(env_cfg, state, action);
    state = std::move(step.state);
    if (step.done) break;
  }
  return records;
}

void export_attention_rollout(const ModelParams& params,
                              const EnvConfig& env_cfg, uint64_t seed,
                              const std::filesystem::path& out_path) {
  nlohmann::json records = attention_rollout(params, env_cfg, seed);
  std::ofstream out(out_path);
  if (!out)
    throw IoError("cannot write attention trace to " + out_path.string());
  out << records.dump(2) << "\n";
  if (!out) throw IoError("short write to " + out_path.string());
}

}  // namespace segrl

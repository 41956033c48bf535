#include "segrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "segrl/errors.hpp"

namespace segrl {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kTanhEps = 1e-6;
constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5*log(2*pi)

std::string dec(int i) { return "/dec" + std::to_string(i); }

template <class S>
void add_head(ParamStoreT<S>& st, const std::string& prefix, int in_dim,
              int hidden, int n_layers, int out_dim) {
  st.add(prefix + "/ln0/g", ParamKind::Gain, 1, in_dim);
  st.add(prefix + "/ln0/b", ParamKind::Shift, 1, in_dim);
  st.add(prefix + "/l1/w", ParamKind::Weight, in_dim, hidden);
  st.add(prefix + "/l1/b", ParamKind::Bias, 1, hidden);
  for (int i = 2; i <= n_layers; ++i) {
    const std::string li = "/l" + std::to_string(i);
    const std::string lni = "/ln" + std::to_string(i);
    st.add(prefix + lni + "/g", ParamKind::Gain, 1, hidden);
    st.add(prefix + lni + "/b", ParamKind::Shift, 1, hidden);
    st.add(prefix + li + "/w", ParamKind::Weight, hidden, hidden);
    st.add(prefix + li + "/b", ParamKind::Bias, 1, hidden);
  }
  st.add(prefix + "/out/w", ParamKind::Weight, hidden, out_dim);
  st.add(prefix + "/out/b", ParamKind::Bias, 1, out_dim);
}

template <class S>
void add_attention(ParamStoreT<S>& st, const std::string& prefix, int d) {
  for (const char* part : {"/q", "/k", "/v", "/o"}) {
    st.add(prefix + part + "/w", ParamKind::Weight, d, d);
    st.add(prefix + part + "/b", ParamKind::Bias, 1, d);
  }
}

template <class S>
void add_transformer(ParamStoreT<S>& st, const ArchConfig& a,
                     const std::string& p, bool is_actor) {
  const int d = a.model_dim;
  st.add(p + "/seg_proj/w", ParamKind::Weight, a.segment_dim, d);
  st.add(p + "/seg_proj/b", ParamKind::Bias, 1, d);
  st.add(p + "/proprio_proj/w", ParamKind::Weight, a.proprio_dim, d);
  st.add(p + "/proprio_proj/b", ParamKind::Bias, 1, d);
  st.add(p + "/bbox_pe/l1/w", ParamKind::Weight, 4, d);
  st.add(p + "/bbox_pe/l1/b", ParamKind::Bias, 1, d);
  st.add(p + "/bbox_pe/l2/w", ParamKind::Weight, d, d);
  st.add(p + "/bbox_pe/l2/b", ParamKind::Bias, 1, d);
  st.add(p + "/type/query", ParamKind::Token, 1, d);
  st.add(p + "/type/segment", ParamKind::Token, 1, d);
  st.add(p + "/type/proprio", ParamKind::Token, 1, d);
  if (is_actor) {
    st.add(p + "/query_token", ParamKind::Token, 1, d);
  } else {
    st.add(p + "/action_token", ParamKind::Token, 1, d);
    st.add(p + "/query_mlp/l1/w", ParamKind::Weight, a.action_dim + d, d);
    st.add(p + "/query_mlp/l1/b", ParamKind::Bias, 1, d);
    st.add(p + "/query_mlp/l2/w", ParamKind::Weight, d, d);
    st.add(p + "/query_mlp/l2/b", ParamKind::Bias, 1, d);
  }
  for (int i = 0; i < a.decoder_layers; ++i) {
    st.add(p + dec(i) + "/self_ln/g", ParamKind::Gain, 1, d);
    st.add(p + dec(i) + "/self_ln/b", ParamKind::Shift, 1, d);
    add_attention(st, p + dec(i) + "/self", d);
    st.add(p + dec(i) + "/cross_ln/g", ParamKind::Gain, 1, d);
    st.add(p + dec(i) + "/cross_ln/b", ParamKind::Shift, 1, d);
    add_attention(st, p + dec(i) + "/cross", d);
    st.add(p + dec(i) + "/ffn_ln/g", ParamKind::Gain, 1, d);
    st.add(p + dec(i) + "/ffn_ln/b", ParamKind::Shift, 1, d);
    st.add(p + dec(i) + "/ffn/l1/w", ParamKind::Weight, d, a.ffn_hidden);
    st.add(p + dec(i) + "/ffn/l1/b", ParamKind::Bias, 1, a.ffn_hidden);
    st.add(p + dec(i) + "/ffn/l2/w", ParamKind::Weight, a.ffn_hidden, d);
    st.add(p + dec(i) + "/ffn/l2/b", ParamKind::Bias, 1, d);
  }
  add_head(st, p + "/head", d, a.proj_hidden_size, a.proj_hidden_layers,
           is_actor ? 2 * a.action_dim : 1);
}

template <class S>
void copy_tree(ParamStoreT<S>& st, const std::string& from,
               const std::string& to) {
  for (int id : st.ids_with_prefix(from)) {
    const auto& entry = st.entries()[id];
    st.value(to + entry.name.substr(from.size())) = entry.value;
  }
}

// Shared forward-building context for one network prefix.
template <class S>
struct NetCtx {
  using Var = typename Tape<S>::Var;
  Tape<S>& t;
  Binder<S>& bind;
  const ArchConfig& arch;
  std::string p;
  const ForwardOptions<S>* options;
  bool capture_here = false;  // only the selected stack records attention

  Var linear(Var x, const std::string& name) {
    return t.add_rowvec(t.matmul(x, bind(p + name + "/w")),
                        bind(p + name + "/b"));
  }
  Var ln(Var x, const std::string& name) {
    return t.layer_norm_rows(x, bind(p + name + "/g"), bind(p + name + "/b"),
                             static_cast<S>(kLnEps));
  }
  Var maybe_dropout(Var x) {
    const double p_drop = arch.dropout;
    if (p_drop <= 0.0) return x;
    if (!options || !options->dropout_rng)
      throw ContractViolation("dropout > 0 requires a dropout rng");
    Mat<S> mask(t.val(x).rows(), t.val(x).cols());
    const S keep_inv = static_cast<S>(1.0 / (1.0 - p_drop));
    for (Eigen::Index r = 0; r < mask.rows(); ++r)
      for (Eigen::Index c = 0; c < mask.cols(); ++c)
        mask(r, c) = options->dropout_rng->bernoulli(p_drop) ? S(0) : keep_inv;
    return t.mul(x, t.constant(std::move(mask)));
  }

  Var attention(Var queries, Var memory,
                const std::vector<typename Tape<S>::BlockSpec>& blocks,
                const std::string& sub, std::vector<Mat<S>>* probs_out) {
    Var q = linear(queries, sub + "/q");
    Var k = linear(memory, sub + "/k");
    Var v = linear(memory, sub + "/v");
    Var merged =
        t.block_attention(q, k, v, blocks, arch.decoder_heads, probs_out);
    return linear(merged, sub + "/o");
  }

  Var build_memory(const PackedBatchT<S>& batch) {
    Var segs = t.constant(batch.segments);
    Var seg_tok = linear(segs, "/seg_proj");
    Var pe_h = t.relu(linear(t.constant(batch.bboxes), "/bbox_pe/l1"));
    Var pe = linear(pe_h, "/bbox_pe/l2");
    seg_tok = t.add(seg_tok, pe);
    seg_tok = t.add_rowvec(seg_tok, bind(p + "/type/segment"));
    Var prop_tok = linear(t.constant(batch.proprio), "/proprio_proj");
    prop_tok = t.add_rowvec(prop_tok, bind(p + "/type/proprio"));
    return t.concat_rows({seg_tok, prop_tok});
  }

  Var decode(Var query, Var memory,
             const std::vector<typename Tape<S>::BlockSpec>& self_blocks,
             const std::vector<typename Tape<S>::BlockSpec>& cross_blocks,
             AttentionRecord* capture, const PackedBatchT<S>& batch) {
    Var q = query;
    for (int i = 0; i < arch.decoder_layers; ++i) {
      Var x = ln(q, dec(i) + "/self_ln");
      q = t.add(q, maybe_dropout(attention(x, x, self_blocks,
                                           dec(i) + "/self", nullptr)));
      Var y = ln(q, dec(i) + "/cross_ln");
      std::vector<Mat<S>> probs;
      const bool want = capture && capture_here && i == arch.decoder_layers - 1;
      q = t.add(q, maybe_dropout(attention(y, memory, cross_blocks,
                                           dec(i) + "/cross",
                                           want ? &probs : nullptr)));
      if (want) fill_capture(*capture, probs, batch);
      Var z = ln(q, dec(i) + "/ffn_ln");
      Var ff = linear(t.relu(linear(z, dec(i) + "/ffn/l1")), dec(i) + "/ffn/l2");
      q = t.add(q, maybe_dropout(ff));
    }
    return q;
  }

  Var head(Var x) {
    Var h = t.relu(linear(ln(x, "/head/ln0"), "/head/l1"));
    for (int i = 2; i <= arch.proj_hidden_layers; ++i) {
      const std::string li = "/head/l" + std::to_string(i);
      const std::string lni = "/head/ln" + std::to_string(i);
      h = t.add(h, t.relu(linear(ln(h, lni), li)));
    }
    return linear(h, "/head/out");
  }

  static void fill_capture(AttentionRecord& record,
                           const std::vector<Mat<S>>& head_probs,
                           const PackedBatchT<S>& batch) {
    const int b_count = batch.batch();
    const int n_total = batch.total();
    Mat<S> avg = head_probs[0];
    for (std::size_t h = 1; h < head_probs.size(); ++h) avg += head_probs[h];
    avg /= static_cast<S>(head_probs.size());
    record.captured = true;
    record.steps.assign(b_count, {});
    for (int b = 0; b < b_count; ++b) {
      auto& step = record.steps[b];
      for (int i = batch.offsets[b]; i < batch.offsets[b + 1]; ++i) {
        AttentionEntry entry;
        entry.role = "segment";
        entry.bbox = batch.bboxes.row(i).template cast<float>().transpose();
        entry.weight = static_cast<double>(avg(b, i));
        step.push_back(std::move(entry));
      }
      AttentionEntry proprio;
      proprio.role = "proprio";
      proprio.weight = static_cast<double>(avg(b, n_total + b));
      step.push_back(std::move(proprio));
    }
  }
};

// Visibility structure of a packed batch: step b's query sees its own
// segment rows plus its own proprio token, nothing else.
template <class S>
std::vector<typename Tape<S>::BlockSpec> cross_visibility(
    const PackedBatchT<S>& batch) {
  std::vector<typename Tape<S>::BlockSpec> blocks(batch.batch());
  for (int b = 0; b < batch.batch(); ++b)
    blocks[b] = {batch.offsets[b], batch.offsets[b + 1] - batch.offsets[b],
                 batch.total() + b};
  return blocks;
}

template <class S>
std::vector<typename Tape<S>::BlockSpec> self_visibility(int b_count) {
  std::vector<typename Tape<S>::BlockSpec> blocks(b_count);
  for (int b = 0; b < b_count; ++b) blocks[b] = {b, 1, -1};
  return blocks;
}

template <class S>
void check_batch(const PackedBatchT<S>& batch, const ArchConfig& arch,
                 bool need_actions, bool actions_overridden) {
  if (batch.batch() < 1) throw ContractViolation("packed batch is empty");
  if (batch.segments.cols() != arch.segment_dim ||
      batch.proprio.cols() != arch.proprio_dim)
    throw ContractViolation("packed batch dims do not match arch config");
  if (!batch.segments.allFinite() || !batch.bboxes.allFinite() ||
      !batch.proprio.allFinite())
    throw ContractViolation("packed batch contains non-finite values");
  if (need_actions && !actions_overridden) {
    if (batch.actions.rows() != batch.batch() ||
        batch.actions.cols() != arch.action_dim)
      throw ContractViolation("critic_forward: actions missing or misshaped");
    if (!batch.actions.allFinite() ||
        (batch.actions.array().abs() > S(1) + S(1e-5)).any())
      throw ContractViolation("critic_forward: actions outside [-1,1]");
  }
}

// Per-step mean of the step's segment rows; the baseline never sees
// individual segments, only this pooled vector.
template <class S>
Mat<S> pooled_global(const PackedBatchT<S>& batch) {
  Mat<S> global(batch.batch(), batch.segments.cols());
  for (int b = 0; b < batch.batch(); ++b) {
    const int n = batch.offsets[b + 1] - batch.offsets[b];
    global.row(b) =
        batch.segments.middleRows(batch.offsets[b], n).colwise().mean();
  }
  return global;
}

}  // namespace

AgentKind parse_agent_kind(const std::string& name) {
  if (name == "segment") return AgentKind::Segment;
  if (name == "global_baseline") return AgentKind::GlobalBaseline;
  throw ConfigError("unknown agent kind: '" + name +
                    "' (expected segment|global_baseline)");
}

std::string to_string(AgentKind kind) {
  return kind == AgentKind::Segment ? "segment" : "global_baseline";
}

void ArchConfig::validate() const {
  if (model_dim < 1 || decoder_heads < 1 || model_dim % decoder_heads != 0)
    throw ConfigError("arch.model_dim must be divisible by decoder_heads");
  if (decoder_layers < 1) throw ConfigError("arch.decoder_layers must be >= 1");
  if (ffn_hidden < 1) throw ConfigError("arch.ffn_hidden must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("arch.dropout must be in [0,1)");
  if (proj_hidden_layers < 1 || proj_hidden_size < 1)
    throw ConfigError("arch projection head dims must be >= 1");
  if (segment_dim < 1 || proprio_dim < 1 || action_dim < 1)
    throw ConfigError("arch input dims must be >= 1");
  if (log_std_min >= log_std_max)
    throw ConfigError("arch.log_std_min must be < log_std_max");
}

ArchConfig ArchConfig::desk() { return ArchConfig{}; }

ArchConfig ArchConfig::paper() {
  ArchConfig a;
  a.model_dim = 128;
  a.decoder_layers = 6;
  a.decoder_heads = 8;
  a.ffn_hidden = 1024;
  a.dropout = 0.0;
  a.proj_hidden_layers = 4;
  a.proj_hidden_size = 256;
  a.segment_dim = 256;
  return a;
}

template <class S>
ModelParamsT<S> init_params(const ArchConfig& arch, AgentKind agent,
                            uint64_t seed) {
  arch.validate();
  ModelParamsT<S> params;
  params.arch = arch;
  params.agent = agent;
  auto& st = params.store;

  if (agent == AgentKind::Segment) {
    add_transformer(st, arch, "actor", /*is_actor=*/true);
    add_transformer(st, arch, "critic1", /*is_actor=*/false);
    add_transformer(st, arch, "critic2", /*is_actor=*/false);
    add_transformer(st, arch, "target_critic1", /*is_actor=*/false);
    add_transformer(st, arch, "target_critic2", /*is_actor=*/false);
  } else {
    const int obs_dim = arch.segment_dim + arch.proprio_dim;
    add_head(st, "actor/head", obs_dim, arch.proj_hidden_size,
             arch.proj_hidden_layers, 2 * arch.action_dim);
    for (const char* p : {"critic1", "critic2", "target_critic1",
                          "target_critic2"})
      add_head(st, std::string(p) + "/head", obs_dim + arch.action_dim,
               arch.proj_hidden_size, arch.proj_hidden_layers, 1);
  }
  st.add("log_alpha", ParamKind::Scalar, 1, 1);

  st.init_values(seed);
  copy_tree(st, "critic1", "target_critic1");
  copy_tree(st, "critic2", "target_critic2");
  return params;
}

PackedBatch pack(const std::vector<SegmentObservation>& observations) {
  if (observations.empty()) throw ContractViolation("pack: empty batch");
  PackedBatch batch;
  const Eigen::Index s_dim = observations[0].embeddings.cols();
  const Eigen::Index p_dim = observations[0].proprio.size();

  batch.offsets.resize(observations.size() + 1);
  batch.offsets[0] = 0;
  for (std::size_t b = 0; b < observations.size(); ++b) {
    const auto& obs = observations[b];
    if (obs.count() < 1)
      throw ContractViolation("pack: observation without segments");
    if (obs.embeddings.cols() != s_dim || obs.proprio.size() != p_dim)
      throw ContractViolation("pack: inconsistent observation dims");
    batch.offsets[b + 1] = batch.offsets[b] + static_cast<int>(obs.count());
  }

  batch.segments.resize(batch.offsets.back(), s_dim);
  batch.bboxes.resize(batch.offsets.back(), 4);
  batch.proprio.resize(static_cast<Eigen::Index>(observations.size()), p_dim);
  for (std::size_t b = 0; b < observations.size(); ++b) {
    const auto& obs = observations[b];
    batch.segments.middleRows(batch.offsets[b],
                              static_cast<int>(obs.count())) = obs.embeddings;
    batch.bboxes.middleRows(batch.offsets[b], static_cast<int>(obs.count())) =
        obs.bboxes;
    batch.proprio.row(static_cast<Eigen::Index>(b)) = obs.proprio.transpose();
  }
  return batch;
}

std::vector<SegmentObservation> unpack(const PackedBatch& batch) {
  std::vector<SegmentObservation> out(batch.batch());
  for (int b = 0; b < batch.batch(); ++b) {
    const int n = batch.offsets[b + 1] - batch.offsets[b];
    out[b].embeddings = batch.segments.middleRows(batch.offsets[b], n);
    out[b].bboxes = batch.bboxes.middleRows(batch.offsets[b], n);
    out[b].proprio = batch.proprio.row(b).transpose();
  }
  return out;
}

const std::vector<std::vector<AttentionEntry>>& attention_weights(
    const AttentionRecord& record) {
  if (!record.captured)
    throw ContractViolation(
        "attention_weights: forward pass ran without attention capture");
  return record.steps;
}

template <class S>
ActorForwardT<S> actor_forward(Tape<S>& tape, const ModelParamsT<S>& params,
                               const PackedBatchT<S>& batch,
                               const ForwardOptions<S>& options) {
  check_batch(batch, params.arch, /*need_actions=*/false, false);
  if (params.agent == AgentKind::GlobalBaseline)
    return baseline_actor_forward(tape, params, pooled_global(batch),
                                  batch.proprio, options.trainable);

  Binder<S> bind(tape, params.store, options.trainable);
  NetCtx<S> ctx{tape, bind, params.arch, "actor", &options,
                options.capture != nullptr};
  const int b_count = batch.batch();

  auto memory = ctx.build_memory(batch);
  auto query = tape.add_rowvec(tape.repeat_row(bind("actor/query_token"), b_count),
                               bind("actor/type/query"));
  auto out = ctx.decode(query, memory, self_visibility<S>(b_count),
                        cross_visibility(batch), options.capture, batch);
  auto head_out = ctx.head(out);

  ActorForwardT<S> result;
  result.mean = tape.slice_cols(head_out, 0, params.arch.action_dim);
  result.log_std = tape.clamp(
      tape.slice_cols(head_out, params.arch.action_dim, params.arch.action_dim),
      static_cast<S>(params.arch.log_std_min),
      static_cast<S>(params.arch.log_std_max));
  result.bound = bind.bound();
  return result;
}

template <class S>
CriticForwardT<S> critic_forward(Tape<S>& tape, const ModelParamsT<S>& params,
                                 const PackedBatchT<S>& batch,
                                 const ForwardOptions<S>& options) {
  const bool overridden = options.actions_var.has_value();
  check_batch(batch, params.arch, /*need_actions=*/true, overridden);
  if (overridden) {
    const Mat<S>& a = tape.val(*options.actions_var);
    if (a.rows() != batch.batch() || a.cols() != params.arch.action_dim)
      throw ContractViolation("critic_forward: action variable misshaped");
  }
  auto actions_of = [&](Tape<S>& t) {
    return overridden ? *options.actions_var : t.constant(batch.actions);
  };

  if (params.agent == AgentKind::GlobalBaseline) {
    Binder<S> bind(tape, params.store, options.trainable);
    ForwardOptions<S> plain;
    Mat<S> base(batch.batch(),
                batch.segments.cols() + batch.proprio.cols());
    base << pooled_global(batch), batch.proprio;
    auto obs_part = tape.constant(std::move(base));
    auto input = tape.concat_cols({obs_part, actions_of(tape)});
    CriticForwardT<S> result;
    typename Tape<S>::Var qs[2];
    for (int which = 0; which < 2; ++which) {
      std::string prefix = (options.use_targets ? "target_critic" : "critic") +
                           std::to_string(which + 1);
      NetCtx<S> ctx{tape, bind, params.arch, prefix, &plain, false};
      qs[which] = ctx.head(input);
    }
    result.q1 = qs[0];
    result.q2 = qs[1];
    result.bound = bind.bound();
    return result;
  }

  Binder<S> bind(tape, params.store, options.trainable);
  const int b_count = batch.batch();
  const auto self_blocks = self_visibility<S>(b_count);
  const auto cross_blocks = cross_visibility(batch);
  auto actions = actions_of(tape);

  CriticForwardT<S> result;
  typename Tape<S>::Var qs[2];
  for (int which = 0; which < 2; ++which) {
    std::string prefix = (options.use_targets ? "target_critic" : "critic") +
                         std::to_string(which + 1);
    NetCtx<S> ctx{tape, bind, params.arch, prefix, &options,
                  options.capture != nullptr && which == 0};
    auto memory = ctx.build_memory(batch);
    auto action_tok =
        tape.repeat_row(bind(prefix + "/action_token"), b_count);
    auto q_in = tape.concat_cols({actions, action_tok});
    auto h = tape.relu(ctx.linear(q_in, "/query_mlp/l1"));
    auto query = tape.add_rowvec(ctx.linear(h, "/query_mlp/l2"),
                                 bind(prefix + "/type/query"));
    auto out = ctx.decode(query, memory, self_blocks, cross_blocks,
                          options.capture, batch);
    qs[which] = ctx.head(out);
  }
  result.q1 = qs[0];
  result.q2 = qs[1];
  result.bound = bind.bound();
  return result;
}

template <class S>
ActorForwardT<S> baseline_actor_forward(Tape<S>& tape,
                                        const ModelParamsT<S>& params,
                                        const Mat<S>& global_vec,
                                        const Mat<S>& proprio,
                                        bool trainable) {
  Binder<S> bind(tape, params.store, trainable);
  ForwardOptions<S> options;
  NetCtx<S> ctx{tape, bind, params.arch, "actor", &options, false};
  Mat<S> input(global_vec.rows(), global_vec.cols() + proprio.cols());
  input << global_vec, proprio;
  auto head_out = ctx.head(tape.constant(std::move(input)));
  ActorForwardT<S> result;
  result.mean = tape.slice_cols(head_out, 0, params.arch.action_dim);
  result.log_std = tape.clamp(
      tape.slice_cols(head_out, params.arch.action_dim, params.arch.action_dim),
      static_cast<S>(params.arch.log_std_min),
      static_cast<S>(params.arch.log_std_max));
  result.bound = bind.bound();
  return result;
}

template <class S>
CriticForwardT<S> baseline_critic_forward(Tape<S>& tape,
                                          const ModelParamsT<S>& params,
                                          const Mat<S>& global_vec,
                                          const Mat<S>& proprio,
                                          const Mat<S>& actions,
                                          bool trainable, bool use_targets) {
  Binder<S> bind(tape, params.store, trainable);
  ForwardOptions<S> options;
  Mat<S> base(global_vec.rows(),
              global_vec.cols() + proprio.cols() + actions.cols());
  base << global_vec, proprio, actions;
  auto input = tape.constant(std::move(base));
  CriticForwardT<S> result;
  typename Tape<S>::Var qs[2];
  for (int which = 0; which < 2; ++which) {
    std::string prefix = (use_targets ? "target_critic" : "critic") +
                         std::to_string(which + 1);
    NetCtx<S> ctx{tape, bind, params.arch, prefix, &options, false};
    qs[which] = ctx.head(input);
  }
  result.q1 = qs[0];
  result.q2 = qs[1];
  result.bound = bind.bound();
  return result;
}

template <class S>
SampleT<S> sample_action_tape(Tape<S>& tape, typename Tape<S>::Var mean,
                              typename Tape<S>::Var log_std,
                              const Mat<S>& eps) {
  auto std_dev = tape.exp_op(log_std);
  auto z = tape.add(mean, tape.mul(std_dev, tape.constant(eps)));
  auto action = tape.tanh_op(z);

  // log N(z; mean, std) reduces to -0.5 eps^2 - log_std - 0.5 log(2 pi)
  // under the reparameterization; the tanh correction keeps gradients.
  Mat<S> gauss_const =
      (-S(0.5) * eps.array().square() - static_cast<S>(kHalfLog2Pi)).matrix();
  auto lp = tape.add(tape.constant(std::move(gauss_const)),
                     tape.scale(log_std, S(-1)));
  auto one_minus_sq = tape.add_const(
      tape.scale(tape.mul(action, action), S(-1)),
      S(1) + static_cast<S>(kTanhEps));
  lp = tape.sub(lp, tape.log_op(one_minus_sq));

  SampleT<S> out;
  out.action = action;
  out.log_prob = tape.row_sum(lp);
  return out;
}

std::pair<Eigen::VectorXf, double> sample_action(const Eigen::VectorXf& mean,
                                                 const Eigen::VectorXf& log_std,
                                                 Rng& rng) {
  // tanh is strictly inside (-1,1) in exact arithmetic; keep the emitted
  // float32 there too when rounding would land exactly on the boundary.
  const float inside = std::nextafter(1.0f, 0.0f);
  Eigen::VectorXf action(mean.size());
  double log_prob = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double eps = rng.normal();
    const double z = static_cast<double>(mean[i]) +
                     std::exp(static_cast<double>(log_std[i])) * eps;
    const double a = std::tanh(z);
    action[i] = std::clamp(static_cast<float>(a), -inside, inside);
    log_prob += -0.5 * eps * eps - static_cast<double>(log_std[i]) -
                kHalfLog2Pi - std::log(1.0 - a * a + kTanhEps);
  }
  return {action, log_prob};
}

Eigen::VectorXf deterministic_action(const Eigen::VectorXf& mean) {
  return mean.array().tanh();
}

PolicyOutput policy_output(const ModelParams& params,
                           const SegmentObservation& obs,
                           AttentionRecord* capture) {
  Tape<float> tape;
  PackedBatch batch = pack({obs});
  ForwardOptions<float> options;
  options.trainable = false;
  options.capture = capture;
  auto fwd = actor_forward(tape, params, batch, options);
  PolicyOutput out;
  out.mean = tape.val(fwd.mean).row(0).transpose();
  out.log_std = tape.val(fwd.log_std).row(0).transpose();
  return out;
}

AttentionRecord critic_attention(const ModelParams& params,
                                 const SegmentObservation& obs,
                                 const Eigen::VectorXf& action) {
  Tape<float> tape;
  PackedBatch batch = pack({obs});
  batch.actions = action.transpose();
  AttentionRecord record;
  ForwardOptions<float> options;
  options.trainable = false;
  options.capture = &record;
  critic_forward(tape, params, batch, options);
  return record;
}

template ModelParamsT<float> init_params<float>(const ArchConfig&, AgentKind,
                                                uint64_t);
template ModelParamsT<double> init_params<double>(const ArchConfig&, AgentKind,
                                                  uint64_t);
template ActorForwardT<float> actor_forward<float>(Tape<float>&,
                                                   const ModelParamsT<float>&,
                                                   const PackedBatchT<float>&,
                                                   const ForwardOptions<float>&);
template ActorForwardT<double> actor_forward<double>(
    Tape<double>&, const ModelParamsT<double>&, const PackedBatchT<double>&,
    const ForwardOptions<double>&);
template CriticForwardT<float> critic_forward<float>(
    Tape<float>&, const ModelParamsT<float>&, const PackedBatchT<float>&,
    const ForwardOptions<float>&);
template CriticForwardT<double> critic_forward<double>(
    Tape<double>&, const ModelParamsT<double>&, const PackedBatchT<double>&,
    const ForwardOptions<double>&);
template ActorForwardT<float> baseline_actor_forward<float>(
    Tape<float>&, const ModelParamsT<float>&, const Mat<float>&,
    const Mat<float>&, bool);
template ActorForwardT<double> baseline_actor_forward<double>(
    Tape<double>&, const ModelParamsT<double>&, const Mat<double>&,
    const Mat<double>&, bool);
template CriticForwardT<float> baseline_critic_forward<float>(
    Tape<float>&, const ModelParamsT<float>&, const Mat<float>&,
    const Mat<float>&, const Mat<float>&, bool, bool);
template CriticForwardT<double> baseline_critic_forward<double>(
    Tape<double>&, const ModelParamsT<double>&, const Mat<double>&,
    const Mat<double>&, const Mat<double>&, bool, bool);
template SampleT<float> sample_action_tape<float>(Tape<float>&,
                                                  Tape<float>::Var,
                                                  Tape<float>::Var,
                                                  const Mat<float>&);
template SampleT<double> sample_action_tape<double>(Tape<double>&,
                                                    Tape<double>::Var,
                                                    Tape<double>::Var,
                                                    const Mat<double>&);

}  // namespace segrl

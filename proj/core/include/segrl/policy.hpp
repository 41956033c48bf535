#pragma once

#include <optional>
#include <string>
#include <vector>

#include "segrl/observation.hpp"
#include "segrl/params.hpp"
#include "segrl/rng.hpp"

namespace segrl {

enum class AgentKind { Segment, GlobalBaseline };

AgentKind parse_agent_kind(const std::string& name);
std::string to_string(AgentKind kind);

struct ArchConfig {
  int model_dim = 32;  // D, divisible by decoder_heads
  int decoder_layers = 2;
  int decoder_heads = 2;
  int ffn_hidden = 128;
  double dropout = 0.0;
  int proj_hidden_layers = 2;
  int proj_hidden_size = 64;
  int segment_dim = 32;  // S
  int proprio_dim = 2;   // P
  int action_dim = 2;    // A
  double log_std_min = -10.0;
  double log_std_max = 2.0;

  void validate() const;
  static ArchConfig desk();
  static ArchConfig paper();  // published hyperparameter values
};

// Every trainable array of the agent: actor, twin critics, their target
// copies, and the log-temperature, addressable by hierarchical name.
template <class S>
struct ModelParamsT {
  ArchConfig arch;
  AgentKind agent = AgentKind::Segment;
  ParamStoreT<S> store;
};

using ModelParams = ModelParamsT<float>;

template <class S>
ModelParamsT<S> init_params(const ArchConfig& arch, AgentKind agent,
                            uint64_t seed);

// B timesteps' segment tokens concatenated into one sequence. offsets has
// B+1 entries with offsets[0] = 0 and offsets[B] = total segment count;
// step b owns segment rows [offsets[b], offsets[b+1]).
template <class S>
struct PackedBatchT {
  Mat<S> segments;           // N_total x S
  Mat<S> bboxes;             // N_total x 4
  std::vector<int> offsets;  // B + 1
  Mat<S> proprio;            // B x P
  Mat<S> actions;            // B x A, required by critic calls

  int batch() const { return static_cast<int>(offsets.size()) - 1; }
  int total() const { return offsets.empty() ? 0 : offsets.back(); }

  template <class T>
  PackedBatchT<T> cast() const {
    PackedBatchT<T> out;
    out.segments = segments.template cast<T>();
    out.bboxes = bboxes.template cast<T>();
    out.offsets = offsets;
    out.proprio = proprio.template cast<T>();
    out.actions = actions.template cast<T>();
    return out;
  }
};

using PackedBatch = PackedBatchT<float>;

PackedBatch pack(const std::vector<SegmentObservation>& observations);
// Inverse by offsets; labels are not packed, so they come back empty.
std::vector<SegmentObservation> unpack(const PackedBatch& batch);

// Final-layer cross-attention weights from the query, averaged over heads.
struct AttentionEntry {
  std::string role;  // "segment" | "proprio"
  std::optional<Eigen::Vector4f> bbox;
  double weight = 0.0;
};

struct AttentionRecord {
  bool captured = false;
  std::vector<std::vector<AttentionEntry>> steps;  // B entries, N_b + 1 each
};

// Reads a record produced by a forward pass with capture enabled; throws
// ContractViolation when capture was not enabled.
const std::vector<std::vector<AttentionEntry>>& attention_weights(
    const AttentionRecord& record);

template <class S>
struct ActorForwardT {
  typename Tape<S>::Var mean;     // B x A
  typename Tape<S>::Var log_std;  // B x A, clamped
  BoundParams<S> bound;
};

template <class S>
struct CriticForwardT {
  typename Tape<S>::Var q1;  // B x 1
  typename Tape<S>::Var q2;  // B x 1
  BoundParams<S> bound;
};

template <class S>
struct ForwardOptions {
  bool trainable = true;
  bool use_targets = false;          // critic only: evaluate target copies
  AttentionRecord* capture = nullptr;
  Rng* dropout_rng = nullptr;        // required when arch.dropout > 0
  // Critic only: use this tape variable as the action input instead of
  // batch.actions, so gradients reach a reparameterized actor sample.
  std::optional<typename Tape<S>::Var> actions_var;
};

template <class S>
ActorForwardT<S> actor_forward(Tape<S>& tape, const ModelParamsT<S>& params,
                               const PackedBatchT<S>& batch,
                               const ForwardOptions<S>& options = {});

template <class S>
CriticForwardT<S> critic_forward(Tape<S>& tape, const ModelParamsT<S>& params,
                                 const PackedBatchT<S>& batch,
                                 const ForwardOptions<S>& options = {});

// Global-representation baseline heads over (global vector, proprio[, action]).
template <class S>
ActorForwardT<S> baseline_actor_forward(Tape<S>& tape,
                                        const ModelParamsT<S>& params,
                                        const Mat<S>& global_vec,
                                        const Mat<S>& proprio,
                                        bool trainable = true);
template <class S>
CriticForwardT<S> baseline_critic_forward(Tape<S>& tape,
                                          const ModelParamsT<S>& params,
                                          const Mat<S>& global_vec,
                                          const Mat<S>& proprio,
                                          const Mat<S>& actions,
                                          bool trainable = true,
                                          bool use_targets = false);

// Reparameterized tanh-Gaussian sample with the change-of-variables
// log-probability; eps is the standard-normal draw, one row per step.
template <class S>
struct SampleT {
  typename Tape<S>::Var action;    // B x A in (-1,1)
  typename Tape<S>::Var log_prob;  // B x 1
};

template <class S>
SampleT<S> sample_action_tape(Tape<S>& tape, typename Tape<S>::Var mean,
                              typename Tape<S>::Var log_std,
                              const Mat<S>& eps);

// Rollout-side sampling; same math as the tape version.
std::pair<Eigen::VectorXf, double> sample_action(const Eigen::VectorXf& mean,
                                                 const Eigen::VectorXf& log_std,
                                                 Rng& rng);
Eigen::VectorXf deterministic_action(const Eigen::VectorXf& mean);

// Single-observation conveniences used by rollout and evaluation code.
struct PolicyOutput {
  Eigen::VectorXf mean;
  Eigen::VectorXf log_std;
};
PolicyOutput policy_output(const ModelParams& params,
                           const SegmentObservation& obs,
                           AttentionRecord* capture = nullptr);
// Critic attention for the deterministic action at obs (analysis path).
AttentionRecord critic_attention(const ModelParams& params,
                                 const SegmentObservation& obs,
                                 const Eigen::VectorXf& action);

extern template ModelParamsT<float> init_params<float>(const ArchConfig&,
                                                       AgentKind, uint64_t);
extern template ModelParamsT<double> init_params<double>(const ArchConfig&,
                                                         AgentKind, uint64_t);

}  // namespace segrl

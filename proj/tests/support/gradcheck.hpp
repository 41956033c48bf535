#pragma once

#include <string>
#include <vector>

#include "segrl/policy.hpp"
#include "support/helpers.hpp"

namespace segrl::testing {

struct GroupError {
  std::string group;
  double max_rel_error = 0.0;
};

inline ArchConfig tiny_arch() {
  ArchConfig arch;
  arch.model_dim = 8;
  arch.decoder_layers = 1;
  arch.decoder_heads = 1;
  arch.ffn_hidden = 16;
  arch.proj_hidden_layers = 2;
  arch.proj_hidden_size = 8;
  arch.segment_dim = 4;
  arch.proprio_dim = 2;
  arch.action_dim = 2;
  return arch;
}

inline PackedBatchT<double> tiny_batch(Rng& rng, int s, int p) {
  std::vector<SegmentObservation> obs{random_obs(rng, 2, s, p),
                                      random_obs(rng, 3, s, p)};
  return pack(obs).cast<double>();
}

// A scalar loss touching every trainable path: the tanh-Gaussian sample and
// its log-probability, both critics through the reparameterized action, and
// the temperature. Double precision against central finite differences.
inline std::vector<GroupError> gradcheck_agent(AgentKind agent,
                                               double h = 1e-6) {
  ModelParamsT<double> params =
      init_params<double>(tiny_arch(), agent, /*seed=*/905);
  Rng rng(77);
  PackedBatchT<double> batch = tiny_batch(rng, 4, 2);
  MatD eps = random_mat<double>(rng, 2, 2);

  struct Eval {
    double loss;
    std::vector<std::pair<int, MatD>> grads;
  };
  auto evaluate = [&](bool want_grads) {
    Tape<double> tape;
    ForwardOptions<double> aopt;
    aopt.trainable = true;
    auto pi = actor_forward(tape, params, batch, aopt);
    auto sample = sample_action_tape(tape, pi.mean, pi.log_std, eps);
    ForwardOptions<double> copt;
    copt.trainable = true;
    copt.actions_var = sample.action;
    auto q = critic_forward(tape, params, batch, copt);

    BoundParams<double> alpha_bound;
    auto log_alpha = tape.leaf(params.store.value("log_alpha"));
    alpha_bound.items.push_back({params.store.require("log_alpha"), log_alpha});

    auto loss = tape.add(tape.mean_all(sample.log_prob),
                         tape.add(tape.mean_all(q.q1), tape.mean_all(q.q2)));
    loss = tape.add(loss, tape.scale(tape.exp_op(log_alpha), 0.5));

    Eval out;
    out.loss = tape.val(loss)(0, 0);
    if (want_grads) {
      tape.backward(loss);
      for (const auto& [id, var] : pi.bound.items)
        out.grads.push_back({id, tape.grad(var)});
      for (const auto& [id, var] : q.bound.items)
        out.grads.push_back({id, tape.grad(var)});
      out.grads.push_back({alpha_bound.items[0].first,
                           tape.grad(alpha_bound.items[0].second)});
    }
    return out;
  };

  Eval analytic = evaluate(true);
  auto loss_only = [&]() { return evaluate(false).loss; };

  std::vector<GroupError> groups;
  auto group_of = [](const std::string& name) {
    auto slash = name.find('/');
    return slash == std::string::npos ? name : name.substr(0, slash);
  };
  auto record = [&](const std::string& group, double err) {
    for (auto& g : groups)
      if (g.group == group) {
        g.max_rel_error = std::max(g.max_rel_error, err);
        return;
      }
    groups.push_back({group, err});
  };

  for (const auto& [id, analytic_grad] : analytic.grads) {
    MatD numeric = fd_gradient(params.store, id, loss_only, h);
    const double na = analytic_grad.norm();
    const double nb = numeric.norm();
    double err = 0.0;
    if (std::max(na, nb) >= 1e-7)
      err = (analytic_grad - numeric).norm() / std::max(na, nb);
    record(group_of(params.store.entries()[id].name), err);
  }
  return groups;
}

}  // namespace segrl::testing

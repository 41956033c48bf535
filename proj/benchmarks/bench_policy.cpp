#include <benchmark/benchmark.h>

#include "segrl/policy.hpp"
#include "support/helpers.hpp"

using namespace segrl;

namespace {

PackedBatch make_batch(int b, int n_per_step) {
  Rng rng(11);
  std::vector<SegmentObservation> obs;
  for (int i = 0; i < b; ++i)
    obs.push_back(testing::random_obs(rng, n_per_step, 32, 2));
  PackedBatch packed = pack(obs);
  packed.actions = MatF::Zero(b, 2);
  return packed;
}

}  // namespace

static void BM_ActorForward(benchmark::State& state) {
  ModelParams params =
      init_params<float>(ArchConfig::desk(), AgentKind::Segment, 1);
  PackedBatch batch = make_batch(static_cast<int>(state.range(0)), 5);
  for (auto _ : state) {
    Tape<float> tape;
    ForwardOptions<float> opt;
    opt.trainable = false;
    auto fwd = actor_forward(tape, params, batch, opt);
    benchmark::DoNotOptimize(tape.val(fwd.mean).data());
  }
}
BENCHMARK(BM_ActorForward)->Arg(1)->Arg(128);

static void BM_CriticForwardBackward(benchmark::State& state) {
  ModelParams params =
      init_params<float>(ArchConfig::desk(), AgentKind::Segment, 2);
  PackedBatch batch = make_batch(static_cast<int>(state.range(0)), 5);
  for (auto _ : state) {
    Tape<float> tape;
    ForwardOptions<float> opt;
    opt.trainable = true;
    auto fwd = critic_forward(tape, params, batch, opt);
    auto loss = tape.add(tape.mean_all(fwd.q1), tape.mean_all(fwd.q2));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(fwd.q1).data());
  }
}
BENCHMARK(BM_CriticForwardBackward)->Arg(128);

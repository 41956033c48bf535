#include <benchmark/benchmark.h>

#include "segrl/learner.hpp"
#include "support/helpers.hpp"

using namespace segrl;

namespace {

Learner make_learner() {
  SacConfig cfg;
  cfg.warmup_steps = 0;
  Learner learner(
      init_params<float>(ArchConfig::desk(), AgentKind::Segment, 3), cfg, 3);
  Rng rng(4);
  for (int i = 0; i < 256; ++i) {
    Transition t;
    t.obs = testing::random_obs(rng, 5, 32, 2);
    t.next_obs = testing::random_obs(rng, 5, 32, 2);
    t.action = Eigen::VectorXf::Zero(2);
    t.reward = 0.5f;
    learner.buffer().add(t);
  }
  return learner;
}

}  // namespace

static void BM_CriticUpdate(benchmark::State& state) {
  Learner learner = make_learner();
  Rng rng(5);
  auto batch = learner.buffer().sample(128, rng);
  for (auto _ : state) benchmark::DoNotOptimize(learner.critic_update(batch));
}
BENCHMARK(BM_CriticUpdate);

static void BM_ActorUpdate(benchmark::State& state) {
  Learner learner = make_learner();
  Rng rng(6);
  auto batch = learner.buffer().sample(128, rng);
  for (auto _ : state) benchmark::DoNotOptimize(learner.actor_update(batch));
}
BENCHMARK(BM_ActorUpdate);

static void BM_FullTrainStep(benchmark::State& state) {
  Learner learner = make_learner();
  Rng rng(7);
  for (auto _ : state) {
    std::vector<Transition> fresh;
    for (int e = 0; e < 4; ++e) {
      Transition t;
      t.obs = testing::random_obs(rng, 5, 32, 2);
      t.next_obs = testing::random_obs(rng, 5, 32, 2);
      t.action = Eigen::VectorXf::Zero(2);
      t.reward = 0.5f;
      fresh.push_back(std::move(t));
    }
    UpdateMetrics m = learner.train_step(fresh);
    benchmark::DoNotOptimize(m.critic_loss);
  }
}
BENCHMARK(BM_FullTrainStep);

static void BM_BufferAddSample(benchmark::State& state) {
  ReplayBuffer buffer(10000);
  Rng rng(8);
  Transition t;
  t.obs = testing::random_obs(rng, 5, 32, 2);
  t.next_obs = testing::random_obs(rng, 5, 32, 2);
  t.action = Eigen::VectorXf::Zero(2);
  for (int i = 0; i < 256; ++i) buffer.add(t);
  for (auto _ : state) {
    buffer.add(t);
    auto batch = buffer.sample(128, rng);
    benchmark::DoNotOptimize(batch.data());
  }
}
BENCHMARK(BM_BufferAddSample);

#include <benchmark/benchmark.h>

#include "segrl/eval.hpp"
#include "segrl/perception.hpp"

using namespace segrl;

namespace {

BinaryMask speckled_mask(int n, double density) {
  Rng rng(7);
  BinaryMask mask;
  mask.height = mask.width = n;
  mask.data.resize(static_cast<std::size_t>(n) * n);
  for (auto& px : mask.data) px = rng.bernoulli(density) ? 1 : 0;
  return mask;
}

}  // namespace

static void BM_PostProcessMask(benchmark::State& state) {
  BinaryMask mask = speckled_mask(64, 0.3);
  const int k = static_cast<int>(state.range(0));
  for (auto _ : state) {
    BinaryMask out = post_process_mask(mask, k);
    benchmark::DoNotOptimize(out.data.data());
  }
}
BENCHMARK(BM_PostProcessMask)->Arg(3)->Arg(9);

static void BM_Rasterize(benchmark::State& state) {
  EnvConfig cfg;
  cfg.distractors_min = cfg.distractors_max = 4;
  SceneState scene = env_reset(cfg, 3);
  for (auto _ : state) {
    RenderResult out = rasterize(cfg, scene);
    benchmark::DoNotOptimize(out.masks.masks.data());
  }
}
BENCHMARK(BM_Rasterize);

static void BM_PatchEmbed(benchmark::State& state) {
  EnvConfig cfg;
  SceneState scene = env_reset(cfg, 3);
  FeatureImage image = rasterize(cfg, scene).image;
  PatchEncoder encoder(cfg.segment_dim, cfg.patch_size, cfg.encoder_seed);
  for (auto _ : state) {
    PatchGrid grid = patch_embed(image, encoder);
    benchmark::DoNotOptimize(grid.embeddings.data());
  }
}
BENCHMARK(BM_PatchEmbed);

static void BM_ObservationPipeline(benchmark::State& state) {
  EnvConfig cfg;
  cfg.distractors_min = cfg.distractors_max = 2;
  ObservationPipeline pipeline(cfg, AgentKind::Segment);
  SceneState scene = env_reset(cfg, 5);
  for (auto _ : state) {
    SegmentObservation obs = pipeline.observe(scene);
    benchmark::DoNotOptimize(obs.embeddings.data());
  }
}
BENCHMARK(BM_ObservationPipeline);

#include <doctest.h>

#include <set>

#include "segrl/env.hpp"
#include "segrl/errors.hpp"

using namespace segrl;

namespace {

EnvConfig reach_cfg(int dmin = 0, int dmax = 0) {
  EnvConfig cfg;
  cfg.task = Task::Reach;
  cfg.distractors_min = dmin;
  cfg.distractors_max = dmax;
  return cfg;
}

}  // namespace

TEST_CASE("reset is deterministic and validates the task id") {
  EnvConfig cfg = reach_cfg();
  SceneState a = env_reset(cfg, 7);
  SceneState b = env_reset(cfg, 7);
  CHECK(a == b);
  SceneState c = env_reset(cfg, 8);
  CHECK(!(a == c));
  CHECK_THROWS_AS(parse_task("juggle"), ConfigError);
}

TEST_CASE("reset respects the distractor range and separation") {
  EnvConfig cfg = reach_cfg(0, 4);
  std::set<int> seen;
  for (uint64_t seed = 0; seed < 200; ++seed) {
    SceneState s = env_reset(cfg, seed);
    CHECK(s.distractors.size() <= 4);
    seen.insert(static_cast<int>(s.distractors.size()));
  }
  CHECK(seen.size() > 1);
}

TEST_CASE("push reset places the object separated from the target") {
  EnvConfig cfg;
  cfg.task = Task::Push;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    SceneState s = env_reset(cfg, seed);
    REQUIRE(s.object_pos.has_value());
    CHECK((*s.object_pos - s.target_pos).norm() >= kMinSeparation);
    CHECK((*s.object_pos - s.effector_pos).norm() >= kMinSeparation);
    CHECK((s.effector_pos - s.target_pos).norm() >= kMinSeparation);
  }
}

TEST_CASE("step arithmetic, clipping, and reward identities") {
  EnvConfig cfg = reach_cfg();
  SceneState s = env_reset(cfg, 3);

  SUBCASE("zero action at the target gives reward 1") {
    s.effector_pos = s.target_pos;
    StepResult r = env_step(cfg, s, {0.0f, 0.0f});
    CHECK(r.reward == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("corner clipping") {
    s.effector_pos = {1.0f, 1.0f};
    StepResult r = env_step(cfg, s, {1.0f, 1.0f});
    CHECK(r.state.effector_pos.x() == 1.0f);
    CHECK(r.state.effector_pos.y() == 1.0f);
  }
  SUBCASE("delta arithmetic") {
    s.effector_pos = {0.5f, 0.5f};
    StepResult r = env_step(cfg, s, {1.0f, 0.0f});
    CHECK(r.state.effector_pos.x() == doctest::Approx(0.55f).epsilon(1e-6));
    CHECK(r.state.effector_pos.y() == doctest::Approx(0.5f).epsilon(1e-6));
  }
  SUBCASE("out-of-range action is a contract violation") {
    CHECK_THROWS_AS(env_step(cfg, s, {1.1f, 0.0f}), ContractViolation);
  }
  SUBCASE("done exactly at the horizon, rewards stay in [0,1]") {
    SceneState state = env_reset(cfg, 5);
    for (int t = 0; t < cfg.horizon; ++t) {
      StepResult r = env_step(cfg, state, {0.3f, -0.2f});
      CHECK(r.reward >= 0.0f);
      CHECK(r.reward <= 1.0f);
      CHECK(r.done == (t == cfg.horizon - 1));
      state = r.state;
    }
  }
}

TEST_CASE("push contact moves the object with the effector") {
  EnvConfig cfg;
  cfg.task = Task::Push;
  SceneState s = env_reset(cfg, 11);
  s.effector_pos = {0.5f, 0.5f};
  s.object_pos = Eigen::Vector2f{0.55f, 0.5f};  // inside contact radius after move
  StepResult r = env_step(cfg, s, {1.0f, 0.0f});
  CHECK(r.state.object_pos->x() == doctest::Approx(0.6f).epsilon(1e-5));
  CHECK(r.state.object_pos->y() == doctest::Approx(0.5f).epsilon(1e-5));
}

TEST_CASE("trajectories are bit-identical for identical seeds and actions") {
  EnvConfig cfg = reach_cfg(0, 3);
  cfg.teleport_prob = 0.3;
  SceneState a = env_reset(cfg, 21);
  SceneState b = env_reset(cfg, 21);
  for (int t = 0; t < 50; ++t) {
    Eigen::Vector2f action{static_cast<float>((t % 5) / 5.0 - 0.4f),
                           static_cast<float>((t % 3) / 3.0)};
    StepResult ra = env_step(cfg, a, action);
    StepResult rb = env_step(cfg, b, action);
    CHECK(ra.state == rb.state);
    CHECK(ra.reward == rb.reward);
    a = ra.state;
    b = rb.state;
  }
}

TEST_CASE("rasterize emits one mask per visible entity plus background") {
  EnvConfig cfg = reach_cfg();
  SceneState s = env_reset(cfg, 1);
  s.effector_pos = {0.25f, 0.25f};
  s.target_pos = {0.75f, 0.75f};
  RenderResult r = rasterize(cfg, s);
  REQUIRE(r.masks.count() == 3);
  CHECK(r.masks.labels[0] == EntityLabel::Effector);
  CHECK(r.masks.labels[1] == EntityLabel::Target);
  CHECK(r.masks.labels[2] == EntityLabel::Background);
  CHECK(r.masks.provenance == MaskProvenance::Oracle);

  SUBCASE("background off drops the background mask") {
    cfg.include_background = false;
    RenderResult r2 = rasterize(cfg, s);
    CHECK(r2.masks.count() == 2);
  }
}

TEST_CASE("fully occluded entities are omitted so N varies") {
  EnvConfig cfg = reach_cfg(1, 1);
  SceneState s = env_reset(cfg, 2);
  s.effector_pos = {0.3f, 0.3f};
  s.target_pos = {0.8f, 0.8f};
  // Distractor (r=3px) hidden entirely under the effector disc (r=4px).
  s.distractors[0].pos = s.effector_pos;
  RenderResult r = rasterize(cfg, s);
  for (EntityLabel label : r.masks.labels)
    CHECK(label != EntityLabel::Distractor);
  CHECK(r.masks.count() == 3);  // effector, target, background
}

TEST_CASE("masks partition the image: pairwise disjoint, sum one with background") {
  EnvConfig cfg = reach_cfg(2, 2);
  SceneState s = env_reset(cfg, 13);
  RenderResult r = rasterize(cfg, s);
  const int n = cfg.image_size;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      int sum = 0;
      for (const auto& m : r.masks.masks) sum += m.at(i, j);
      CHECK(sum == 1);
    }
  }
}

TEST_CASE("feature image one-hots match z-order and ramps are coordinates") {
  EnvConfig cfg = reach_cfg(1, 1);
  SceneState s = env_reset(cfg, 4);
  RenderResult r = rasterize(cfg, s);
  const int n = cfg.image_size;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      int active = 0;
      for (int c = 0; c < 4; ++c) {
        float v = r.image.at(c, i, j);
        CHECK((v == 0.0f || v == 1.0f));
        active += v > 0.5f;
      }
      CHECK(active <= 1);
      CHECK(r.image.at(4, i, j) == doctest::Approx((j + 0.5f) / n));
      CHECK(r.image.at(5, i, j) == doctest::Approx((i + 0.5f) / n));
    }
  }
}

TEST_CASE("within-episode N varies under teleporting distractors") {
  EnvConfig cfg = reach_cfg(0, 4);
  cfg.teleport_prob = 0.1;
  cfg.horizon = 30;
  bool found = false;
  for (uint64_t ep = 0; ep < 1000 && !found; ++ep) {
    SceneState s = env_reset(cfg, ep);
    std::set<std::size_t> counts;
    for (int t = 0; t < cfg.horizon; ++t) {
      counts.insert(rasterize(cfg, s).masks.count());
      if (counts.size() > 1) {
        found = true;
        break;
      }
      s = env_step(cfg, s, {0.1f, 0.1f}).state;
    }
  }
  CHECK(found);
}

TEST_CASE("patch encoder is frozen, seeded, and scale bounded") {
  PatchEncoder a(32, 8, 99), b(32, 8, 99), c(32, 8, 100);
  CHECK(a.projection() == b.projection());
  CHECK(a.projection() != c.projection());
  const float bound = 1.0f / std::sqrt(6.0f * 8 * 8);
  CHECK((a.projection().array().abs() <= bound).all());
}

TEST_CASE("patch_embed shape, linearity, and zero preservation") {
  EnvConfig cfg = reach_cfg();
  PatchEncoder encoder(cfg.segment_dim, cfg.patch_size, cfg.encoder_seed);

  FeatureImage zero;
  zero.height = zero.width = 64;
  zero.data.assign(6 * 64 * 64, 0.0f);
  PatchGrid zg = patch_embed(zero, encoder);
  CHECK(zg.grid_h == 8);
  CHECK(zg.grid_w == 8);
  CHECK(zg.embeddings.rows() == 64);
  CHECK(zg.embeddings.cols() == 32);
  CHECK(zg.embeddings.isZero(0.0f));

  SceneState s = env_reset(cfg, 17);
  FeatureImage img = rasterize(cfg, s).image;
  FeatureImage doubled = img;
  for (float& v : doubled.data) v *= 2.0f;
  PatchGrid g1 = patch_embed(img, encoder);
  PatchGrid g2 = patch_embed(doubled, encoder);
  CHECK((g2.embeddings - 2.0f * g1.embeddings).cwiseAbs().maxCoeff() < 1e-5f);

  FeatureImage odd = img;
  odd.height = 60;  // not divisible by 8
  CHECK_THROWS_AS(patch_embed(odd, encoder), ConfigError);
}

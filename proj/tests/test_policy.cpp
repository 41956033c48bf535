#include <doctest.h>

#include <cmath>
#include <numeric>

#include "segrl/errors.hpp"
#include "segrl/policy.hpp"
#include "support/gradcheck.hpp"
#include "support/helpers.hpp"

using namespace segrl;
using namespace segrl::testing;

namespace {

ModelParams desk_params(uint64_t seed = 1,
                        AgentKind agent = AgentKind::Segment) {
  return init_params<float>(ArchConfig::desk(), agent, seed);
}

PackedBatch batch_of(const std::vector<SegmentObservation>& obs) {
  return pack(obs);
}

MatF actor_mean(const ModelParams& params, const PackedBatch& batch) {
  Tape<float> tape;
  ForwardOptions<float> opt;
  opt.trainable = false;
  auto fwd = actor_forward(tape, params, batch, opt);
  return tape.val(fwd.mean);
}

std::pair<MatF, MatF> critic_values(const ModelParams& params,
                                    const PackedBatch& batch) {
  Tape<float> tape;
  ForwardOptions<float> opt;
  opt.trainable = false;
  auto fwd = critic_forward(tape, params, batch, opt);
  return {tape.val(fwd.q1), tape.val(fwd.q2)};
}

void zero_entries(ModelParams& params, const std::string& prefix) {
  for (int id : params.store.ids_with_prefix(prefix))
    params.store.value(id).setZero();
}

MatF random_actions(Rng& rng, int b, int a) {
  MatF actions(b, a);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < a; ++j)
      actions(i, j) = static_cast<float>(rng.uniform(-0.9, 0.9));
  return actions;
}

}  // namespace

TEST_CASE("init_params is deterministic with exact target copies") {
  ModelParams a = desk_params(42);
  ModelParams b = desk_params(42);
  REQUIRE(a.store.size() == b.store.size());
  for (std::size_t i = 0; i < a.store.size(); ++i)
    CHECK(a.store.entries()[i].value == b.store.entries()[i].value);

  for (const char* online : {"critic1", "critic2"}) {
    std::string target = std::string("target_") + online;
    auto on_ids = a.store.ids_with_prefix(online);
    auto tg_ids = a.store.ids_with_prefix(target);
    REQUIRE(on_ids.size() == tg_ids.size());
    for (std::size_t i = 0; i < on_ids.size(); ++i)
      CHECK(a.store.entries()[on_ids[i]].value ==
            a.store.entries()[tg_ids[i]].value);
  }

  CHECK(a.store.value("log_alpha")(0, 0) == 0.0f);

  ModelParams c = desk_params(43);
  bool differs = false;
  for (std::size_t i = 0; i < a.store.size(); ++i)
    differs |= (a.store.entries()[i].value != c.store.entries()[i].value);
  CHECK(differs);
}

TEST_CASE("weight magnitudes respect the 1/sqrt(fan_in) bound") {
  ModelParams p = desk_params(7);
  for (const auto& entry : p.store.entries()) {
    if (entry.kind != ParamKind::Weight) continue;
    const float bound =
        1.0f / std::sqrt(static_cast<float>(entry.value.rows()));
    CHECK(entry.value.cwiseAbs().maxCoeff() <= bound);
  }
}

TEST_CASE("pack records offsets and unpack round trips") {
  Rng rng(3);
  SUBCASE("single step") {
    auto obs = random_obs(rng, 4, 32, 2);
    PackedBatch b = batch_of({obs});
    CHECK(b.offsets == std::vector<int>{0, 4});
  }
  SUBCASE("offsets for N=(2,3)") {
    auto o1 = random_obs(rng, 2, 32, 2);
    auto o2 = random_obs(rng, 3, 32, 2);
    PackedBatch b = batch_of({o1, o2});
    CHECK(b.offsets == std::vector<int>{0, 2, 5});
  }
  SUBCASE("round trip is exact") {
    std::vector<SegmentObservation> obs;
    for (int i = 0; i < 5; ++i)
      obs.push_back(random_obs(rng, 1 + static_cast<int>(rng.uniform_int(6)),
                               32, 2));
    auto back = unpack(batch_of(obs));
    REQUIRE(back.size() == obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
      CHECK(back[i].embeddings == obs[i].embeddings);
      CHECK(back[i].bboxes == obs[i].bboxes);
      CHECK(back[i].proprio == obs[i].proprio);
    }
  }
  SUBCASE("empty batch and empty observations are rejected") {
    CHECK_THROWS_AS(pack({}), ContractViolation);
    SegmentObservation empty;
    empty.embeddings = MatF(0, 32);
    empty.bboxes = MatF(0, 4);
    empty.proprio = Eigen::VectorXf::Zero(2);
    CHECK_THROWS_AS(pack({empty}), ContractViolation);
  }
}

TEST_CASE("zeroed actor head emits zero mean and clamp(0) log_std") {
  ModelParams p = desk_params(5);
  zero_entries(p, "actor/head/out");
  Rng rng(9);
  PackedBatch b = batch_of({random_obs(rng, 3, 32, 2)});
  Tape<float> tape;
  ForwardOptions<float> opt;
  opt.trainable = false;
  auto fwd = actor_forward(tape, p, b, opt);
  CHECK(tape.val(fwd.mean).isZero(0.0f));
  CHECK(tape.val(fwd.log_std).isZero(0.0f));
}

TEST_CASE("log_std is hard clamped to the configured bounds") {
  ModelParams p = desk_params(6);
  zero_entries(p, "actor/head/out");
  auto& bias = p.store.value("actor/head/out/b");
  const int a_dim = p.arch.action_dim;

  Rng rng(10);
  PackedBatch b = batch_of({random_obs(rng, 2, 32, 2)});

  bias(0, a_dim) = 5.0f;     // raw log_std 5 -> 2
  bias(0, a_dim + 1) = -20.0f;  // raw -20 -> -10
  Tape<float> tape;
  ForwardOptions<float> opt;
  opt.trainable = false;
  auto fwd = actor_forward(tape, p, b, opt);
  CHECK(tape.val(fwd.log_std)(0, 0) == 2.0f);
  CHECK(tape.val(fwd.log_std)(0, 1) == -10.0f);
}

TEST_CASE("segment permutation within a step leaves outputs unchanged") {
  ModelParams p = desk_params(11);
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_int(8));
    auto obs = random_obs(rng, n, 32, 2);
    SegmentObservation shuffled = obs;
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
    for (int i = 0; i < n; ++i) {
      shuffled.embeddings.row(i) = obs.embeddings.row(perm[i]);
      shuffled.bboxes.row(i) = obs.bboxes.row(perm[i]);
    }

    PackedBatch b1 = batch_of({obs});
    PackedBatch b2 = batch_of({shuffled});
    CHECK((actor_mean(p, b1) - actor_mean(p, b2)).cwiseAbs().maxCoeff() <
          1e-6f);

    MatF actions = random_actions(rng, 1, 2);
    b1.actions = actions;
    b2.actions = actions;
    auto [q1a, q2a] = critic_values(p, b1);
    auto [q1b, q2b] = critic_values(p, b2);
    CHECK(std::abs(q1a(0, 0) - q1b(0, 0)) < 1e-6f);
    CHECK(std::abs(q2a(0, 0) - q2b(0, 0)) < 1e-6f);
  }
}

TEST_CASE("packed evaluation equals per-step evaluation") {
  ModelParams p = desk_params(13);
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const int b_count = 1 + static_cast<int>(rng.uniform_int(8));
    std::vector<SegmentObservation> obs;
    for (int i = 0; i < b_count; ++i)
      obs.push_back(random_obs(rng, 1 + static_cast<int>(rng.uniform_int(12)),
                               32, 2));
    PackedBatch packed = batch_of(obs);
    packed.actions = random_actions(rng, b_count, 2);

    MatF mean_packed = actor_mean(p, packed);
    auto [q1_packed, q2_packed] = critic_values(p, packed);

    for (int i = 0; i < b_count; ++i) {
      PackedBatch single = batch_of({obs[i]});
      single.actions = packed.actions.row(i);
      MatF mean_single = actor_mean(p, single);
      auto [q1s, q2s] = critic_values(p, single);
      for (int c = 0; c < 2; ++c) {
        const float rel = std::abs(mean_packed(i, c) - mean_single(0, c)) /
                          std::max(1.0f, std::abs(mean_single(0, c)));
        CHECK(rel < 1e-5f);
      }
      CHECK(std::abs(q1_packed(i, 0) - q1s(0, 0)) /
                std::max(1.0f, std::abs(q1s(0, 0))) <
            1e-5f);
      CHECK(std::abs(q2_packed(i, 0) - q2s(0, 0)) /
                std::max(1.0f, std::abs(q2s(0, 0))) <
            1e-5f);
    }
  }
}

TEST_CASE("cross-step isolation: edits to other steps never leak") {
  ModelParams p = desk_params(15);
  Rng rng(16);
  auto o0 = random_obs(rng, 4, 32, 2);
  auto o1 = random_obs(rng, 3, 32, 2);
  auto o1_edit = random_obs(rng, 6, 32, 2);

  PackedBatch a = batch_of({o0, o1});
  PackedBatch b = batch_of({o0, o1_edit});
  MatF actions = random_actions(rng, 2, 2);
  a.actions = actions;
  b.actions = actions;

  CHECK((actor_mean(p, a).row(0) - actor_mean(p, b).row(0))
            .cwiseAbs()
            .maxCoeff() < 1e-6f);
  auto [q1a, q2a] = critic_values(p, a);
  auto [q1b, q2b] = critic_values(p, b);
  CHECK(std::abs(q1a(0, 0) - q1b(0, 0)) < 1e-6f);
  CHECK(std::abs(q2a(0, 0) - q2b(0, 0)) < 1e-6f);
}

TEST_CASE("sample_action: squashing, determinism limit, and density") {
  Rng rng(17);
  SUBCASE("log_std -10 is effectively deterministic") {
    Eigen::VectorXf mean(2);
    mean << 0.4f, -1.2f;
    Eigen::VectorXf log_std = Eigen::VectorXf::Constant(2, -10.0f);
    for (int i = 0; i < 100; ++i) {
      auto [action, lp] = sample_action(mean, log_std, rng);
      CHECK(std::abs(action[0] - std::tanh(0.4f)) < 1e-3f);
      CHECK(std::abs(action[1] - std::tanh(-1.2f)) < 1e-3f);
    }
  }
  SUBCASE("samples stay strictly inside (-1,1)") {
    Eigen::VectorXf mean = Eigen::VectorXf::Constant(2, 3.0f);
    Eigen::VectorXf log_std = Eigen::VectorXf::Constant(2, 2.0f);
    for (int i = 0; i < 2000; ++i) {
      auto [action, lp] = sample_action(mean, log_std, rng);
      CHECK(action[0] > -1.0f);
      CHECK(action[0] < 1.0f);
      CHECK(std::isfinite(lp));
    }
  }
  SUBCASE("log_prob matches the change-of-variables density") {
    Eigen::VectorXf mean(1), log_std(1);
    mean << 0.3f;
    log_std << -0.5f;
    for (int i = 0; i < 200; ++i) {
      auto [action, lp] = sample_action(mean, log_std, rng);
      const double a = action[0];
      const double z = std::atanh(a);
      const double sigma = std::exp(-0.5);
      const double log_gauss = -0.5 * std::pow((z - 0.3) / sigma, 2) -
                               std::log(sigma) - 0.5 * std::log(2 * M_PI);
      const double expected = log_gauss - std::log(1.0 - a * a + 1e-6);
      CHECK(lp == doctest::Approx(expected).epsilon(1e-3));
    }
  }
  SUBCASE("Monte-Carlo histogram matches the analytic density (A=1)") {
    Eigen::VectorXf mean = Eigen::VectorXf::Zero(1);
    Eigen::VectorXf log_std = Eigen::VectorXf::Zero(1);
    const int n = 1000000;
    const int bins = 40;
    std::vector<int> hist(bins, 0);
    Rng mc(314159);
    for (int i = 0; i < n; ++i) {
      auto [action, lp] = sample_action(mean, log_std, mc);
      int bin = static_cast<int>((action[0] + 1.0f) / 2.0f * bins);
      bin = std::clamp(bin, 0, bins - 1);
      ++hist[bin];
    }
    // p(a) = phi(atanh a) / (1 - a^2); compare bin mass via midpoint rule.
    for (int bin = 5; bin < bins - 5; ++bin) {
      const double a = -1.0 + (bin + 0.5) * 2.0 / bins;
      const double z = std::atanh(a);
      const double density = std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI) /
                             (1.0 - a * a);
      const double expected = density * (2.0 / bins);
      const double observed = static_cast<double>(hist[bin]) / n;
      CHECK(observed ==
            doctest::Approx(expected).epsilon(0.05).scale(0.0005));
    }
  }
}

TEST_CASE("deterministic_action is tanh of the mean") {
  Eigen::VectorXf zero = Eigen::VectorXf::Zero(2);
  CHECK(deterministic_action(zero).isZero(0.0f));
  Eigen::VectorXf big = Eigen::VectorXf::Constant(2, 50.0f);
  CHECK(deterministic_action(big)[0] == doctest::Approx(1.0f));
}

TEST_CASE("zeroed critic heads give zero Q everywhere") {
  ModelParams p = desk_params(19);
  zero_entries(p, "critic1/head/out");
  zero_entries(p, "critic2/head/out");
  Rng rng(20);
  PackedBatch b = batch_of({random_obs(rng, 3, 32, 2),
                            random_obs(rng, 5, 32, 2)});
  b.actions = random_actions(rng, 2, 2);
  auto [q1, q2] = critic_values(p, b);
  CHECK(q1.isZero(0.0f));
  CHECK(q2.isZero(0.0f));
}

TEST_CASE("twin critics differ at init on random inputs") {
  ModelParams p = desk_params(21);
  Rng rng(22);
  PackedBatch b = batch_of({random_obs(rng, 4, 32, 2)});
  b.actions = random_actions(rng, 1, 2);
  auto [q1, q2] = critic_values(p, b);
  CHECK(q1(0, 0) != q2(0, 0));
}

TEST_CASE("attention capture: normalization, arity, and the uniform case") {
  ModelParams p = desk_params(23);
  Rng rng(24);
  std::vector<SegmentObservation> obs{random_obs(rng, 5, 32, 2),
                                      random_obs(rng, 2, 32, 2)};
  PackedBatch b = batch_of(obs);
  b.actions = random_actions(rng, 2, 2);

  AttentionRecord record;
  Tape<float> tape;
  ForwardOptions<float> opt;
  opt.trainable = false;
  opt.capture = &record;
  critic_forward(tape, p, b, opt);

  const auto& steps = attention_weights(record);
  REQUIRE(steps.size() == 2);
  for (std::size_t s = 0; s < steps.size(); ++s) {
    CHECK(steps[s].size() == obs[s].count() + 1);
    double total = 0.0;
    for (const auto& e : steps[s]) total += e.weight;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(steps[s].back().role == "proprio");
    CHECK(!steps[s].back().bbox.has_value());
    CHECK(steps[s].front().role == "segment");
    CHECK(steps[s].front().bbox.has_value());
  }

  SUBCASE("no capture requested -> contract violation on read") {
    AttentionRecord empty;
    CHECK_THROWS_AS(attention_weights(empty), ContractViolation);
  }

  SUBCASE("identical key tokens attend uniformly") {
    ModelParams q = desk_params(25);
    // Collapse every key token to the zero vector.
    for (const char* name :
         {"critic1/seg_proj/w", "critic1/seg_proj/b", "critic1/bbox_pe/l1/w",
          "critic1/bbox_pe/l1/b", "critic1/bbox_pe/l2/w", "critic1/bbox_pe/l2/b",
          "critic1/proprio_proj/w", "critic1/proprio_proj/b",
          "critic1/type/segment", "critic1/type/proprio"})
      q.store.value(name).setZero();
    AttentionRecord rec;
    Tape<float> t2;
    ForwardOptions<float> o2;
    o2.trainable = false;
    o2.capture = &rec;
    PackedBatch b2 = batch_of({random_obs(rng, 4, 32, 2)});
    b2.actions = random_actions(rng, 1, 2);
    critic_forward(t2, q, b2, o2);
    const auto& steps2 = attention_weights(rec);
    for (const auto& e : steps2[0])
      CHECK(e.weight == doctest::Approx(1.0 / 5).epsilon(1e-5));
  }
}

TEST_CASE("baseline heads: dimensions, zero head, dispatch through pack") {
  ArchConfig arch = ArchConfig::desk();
  ModelParams p = init_params<float>(arch, AgentKind::GlobalBaseline, 31);

  CHECK(p.store.value("actor/head/l1/w").rows() ==
        arch.segment_dim + arch.proprio_dim);
  CHECK(p.store.value("critic1/head/l1/w").rows() ==
        arch.segment_dim + arch.proprio_dim + arch.action_dim);

  Rng rng(32);
  PackedBatch b = batch_of({random_obs(rng, 1, 32, 2)});
  b.actions = random_actions(rng, 1, 2);

  MatF mean1 = actor_mean(p, b);
  MatF mean2 = actor_mean(p, b);
  CHECK(mean1 == mean2);

  ModelParams zeroed = p;
  zero_entries(zeroed, "actor/head/out");
  zero_entries(zeroed, "critic1/head/out");
  zero_entries(zeroed, "critic2/head/out");
  CHECK(actor_mean(zeroed, b).isZero(0.0f));
  auto [q1, q2] = critic_values(zeroed, b);
  CHECK(q1.isZero(0.0f));
  CHECK(q2.isZero(0.0f));

  // Multi-segment observations are pooled before the baseline head, so the
  // observed input dimension is S+P regardless of N.
  PackedBatch many = batch_of({random_obs(rng, 7, 32, 2)});
  many.actions = random_actions(rng, 1, 2);
  CHECK(std::isfinite(actor_mean(p, many)(0, 0)));
}

TEST_CASE("Q responds continuously to action perturbations") {
  ModelParams p = desk_params(27);
  Rng rng(28);
  PackedBatch base = batch_of({random_obs(rng, 4, 32, 2)});
  base.actions = MatF::Zero(1, 2);
  auto [q0, q0b] = critic_values(p, base);
  for (double delta : {1e-3, 1e-2, 1e-1}) {
    for (int dim = 0; dim < 2; ++dim) {
      PackedBatch nudged = base;
      nudged.actions(0, dim) += static_cast<float>(delta);
      auto [q1, q1b] = critic_values(p, nudged);
      const double slope = std::abs(q1(0, 0) - q0(0, 0)) / delta;
      CHECK(std::isfinite(slope));
      CHECK(slope < 100.0);  // bounded directional derivative
    }
  }
}

TEST_CASE("contract violations: non-finite inputs and bad actions") {
  ModelParams p = desk_params(33);
  Rng rng(34);
  auto obs = random_obs(rng, 3, 32, 2);
  obs.embeddings(0, 0) = std::numeric_limits<float>::quiet_NaN();
  Tape<float> tape;
  ForwardOptions<float> opt;
  opt.trainable = false;
  CHECK_THROWS_AS(actor_forward(tape, p, batch_of({obs}), opt),
                  ContractViolation);

  auto ok = random_obs(rng, 3, 32, 2);
  PackedBatch b = batch_of({ok});
  b.actions = MatF(1, 2);
  b.actions << 1.5f, 0.0f;
  CHECK_THROWS_AS(critic_forward(tape, p, b, opt), ContractViolation);
}

TEST_CASE("gradient check: every parameter group of the tiny config") {
  for (AgentKind agent : {AgentKind::Segment, AgentKind::GlobalBaseline}) {
    auto groups = gradcheck_agent(agent);
    REQUIRE(!groups.empty());
    bool saw_actor = false, saw_alpha = false;
    for (const auto& g : groups) {
      INFO(to_string(agent), " group ", g.group, " rel_error ",
           g.max_rel_error);
      CHECK(g.max_rel_error < 1e-4);
      saw_actor |= g.group == "actor";
      saw_alpha |= g.group == "log_alpha";
    }
    CHECK(saw_actor);
    CHECK(saw_alpha);
  }
}

#include "segrl/env.hpp"

#include <algorithm>
#include <cmath>

#include "segrl/errors.hpp"

namespace segrl {

namespace {

constexpr float kSqrt2 = 1.41421356237309515f;

float clip01(float v) { return std::clamp(v, 0.0f, 1.0f); }

Eigen::Vector2f clip01(const Eigen::Vector2f& v) {
  return {clip01(v.x()), clip01(v.y())};
}

Eigen::Vector2f sample_position(Rng& rng) {
  float x = static_cast<float>(rng.uniform());
  float y = static_cast<float>(rng.uniform());
  return {x, y};
}

Eigen::Vector2f sample_separated(Rng& rng,
                                 const std::vector<Eigen::Vector2f>& placed) {
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Eigen::Vector2f candidate = sample_position(rng);
    bool ok = true;
    for (const auto& p : placed) {
      if ((candidate - p).norm() < kMinSeparation) {
        ok = false;
        break;
      }
    }
    if (ok) return candidate;
  }
  throw ConfigError("env_reset: could not place entities with separation 0.1");
}

// Reward terms are distances normalized by the workspace diagonal, so each
// lands in [0,1].
float closeness(const Eigen::Vector2f& a, const Eigen::Vector2f& b) {
  return 1.0f - (a - b).norm() / kSqrt2;
}

struct Disc {
  Eigen::Vector2f center;
  float radius_px;
  EntityLabel label;
  int channel;  // one-hot class channel, -1 for none
};

}  // namespace

std::string to_string(EntityLabel label) {
  switch (label) {
    case EntityLabel::Effector: return "effector";
    case EntityLabel::Target: return "target";
    case EntityLabel::Object: return "object";
    case EntityLabel::Distractor: return "distractor";
    case EntityLabel::Background: return "background";
    case EntityLabel::Fallback: return "fallback";
    case EntityLabel::Spurious: return "spurious";
  }
  return "unknown";
}

SegmentObservation fallback_segment(int segment_dim,
                                    const Eigen::VectorXf& proprio) {
  SegmentObservation obs;
  obs.embeddings = MatF::Zero(1, segment_dim);
  obs.bboxes = MatF(1, 4);
  obs.bboxes << 0.0f, 0.0f, 1.0f, 1.0f;
  obs.labels = {EntityLabel::Fallback};
  obs.proprio = proprio;
  return obs;
}

Task parse_task(const std::string& name) {
  if (name == "reach") return Task::Reach;
  if (name == "push") return Task::Push;
  throw ConfigError("unknown task id: '" + name + "' (expected reach|push)");
}

std::string to_string(Task task) {
  return task == Task::Reach ? "reach" : "push";
}

void EnvConfig::validate() const {
  if (horizon < 1) throw ConfigError("env.horizon must be >= 1");
  if (distractors_min < 0 || distractors_max < distractors_min)
    throw ConfigError("env.distractors range invalid");
  if (teleport_prob < 0.0 || teleport_prob > 1.0)
    throw ConfigError("env.teleport_prob must be in [0,1]");
  if (image_size < 8) throw ConfigError("env.image_size must be >= 8");
  if (patch_size < 1 || image_size % patch_size != 0)
    throw ConfigError("env.patch_size must divide image_size");
  if (segment_dim < 1) throw ConfigError("env.segment_dim must be >= 1");
  if (min_pixels < 1) throw ConfigError("env.min_pixels must be >= 1");
  if (post_process_kernel < 1 || post_process_kernel % 2 == 0)
    throw ConfigError("env.post_process_kernel must be odd and >= 1");
}

bool SceneState::operator==(const SceneState& other) const {
  if (effector_pos != other.effector_pos) return false;
  if (object_pos.has_value() != other.object_pos.has_value()) return false;
  if (object_pos && *object_pos != *other.object_pos) return false;
  if (target_pos != other.target_pos) return false;
  if (distractors.size() != other.distractors.size()) return false;
  for (std::size_t i = 0; i < distractors.size(); ++i) {
    if (distractors[i].pos != other.distractors[i].pos) return false;
    if (distractors[i].shape_id != other.distractors[i].shape_id) return false;
  }
  return step_index == other.step_index && rng == other.rng;
}

int BinaryMask::area() const {
  int total = 0;
  for (uint8_t v : data) total += v;
  return total;
}

SceneState env_reset(const EnvConfig& cfg, uint64_t seed) {
  cfg.validate();
  SceneState state;
  state.rng = Rng(seed);
  state.step_index = 0;

  std::vector<Eigen::Vector2f> placed;
  state.effector_pos = sample_separated(state.rng, placed);
  placed.push_back(state.effector_pos);
  state.target_pos = sample_separated(state.rng, placed);
  placed.push_back(state.target_pos);
  if (cfg.task == Task::Push) {
    state.object_pos = sample_separated(state.rng, placed);
    placed.push_back(*state.object_pos);
  }

  int span = cfg.distractors_max - cfg.distractors_min + 1;
  int count = cfg.distractors_min +
              static_cast<int>(state.rng.uniform_int(static_cast<uint64_t>(span)));
  state.distractors.reserve(count);
  for (int i = 0; i < count; ++i) {
    Distractor d;
    d.pos = sample_separated(state.rng, placed);
    d.shape_id = static_cast<int>(state.rng.uniform_int(4));
    placed.push_back(d.pos);
    state.distractors.push_back(d);
  }
  return state;
}

StepResult env_step(const EnvConfig& cfg, const SceneState& state,
                    const Eigen::Vector2f& action) {
  for (int i = 0; i < kActionDim; ++i) {
    if (std::abs(action[i]) > 1.0f + 1e-6f)
      throw ContractViolation("env_step: action component outside [-1,1]");
  }
  Eigen::Vector2f a{std::clamp(action.x(), -1.0f, 1.0f),
                    std::clamp(action.y(), -1.0f, 1.0f)};

  StepResult result;
  result.state = state;
  SceneState& next = result.state;

  for (auto& d : next.distractors) {
    if (next.rng.bernoulli(cfg.teleport_prob)) d.pos = sample_position(next.rng);
  }

  Eigen::Vector2f before = next.effector_pos;
  next.effector_pos = clip01(Eigen::Vector2f(before + kEffectorStep * a));

  if (cfg.task == Task::Push) {
    const float contact =
        (kEffectorRadiusPx + kObjectRadiusPx) / 64.0f;
    Eigen::Vector2f obj = *next.object_pos;
    if ((next.effector_pos - obj).norm() < contact) {
      obj = clip01(Eigen::Vector2f(obj + (next.effector_pos - before)));
    }
    next.object_pos = obj;
    result.reward = 0.5f * closeness(next.effector_pos, obj) +
                    0.5f * closeness(obj, next.target_pos);
  } else {
    result.reward = closeness(next.effector_pos, next.target_pos);
  }

  next.step_index = state.step_index + 1;
  result.done = next.step_index == cfg.horizon;
  return result;
}

RenderResult rasterize(const EnvConfig& cfg, const SceneState& state) {
  const int n = cfg.image_size;
  const float px_scale = static_cast<float>(n) / 64.0f;

  // Ownership priority: effector > object > distractor > target.
  std::vector<Disc> discs;
  discs.push_back({state.effector_pos, kEffectorRadiusPx * px_scale,
                   EntityLabel::Effector, 0});
  if (state.object_pos)
    discs.push_back(
        {*state.object_pos, kObjectRadiusPx * px_scale, EntityLabel::Object, 2});
  for (const auto& d : state.distractors)
    discs.push_back(
        {d.pos, kDistractorRadiusPx * px_scale, EntityLabel::Distractor, 3});
  discs.push_back(
      {state.target_pos, kTargetRadiusPx * px_scale, EntityLabel::Target, 1});

  RenderResult out;
  out.image.height = n;
  out.image.width = n;
  out.image.data.assign(static_cast<std::size_t>(FeatureImage::kChannels) * n * n,
                        0.0f);

  std::vector<BinaryMask> entity_masks(discs.size());
  for (auto& m : entity_masks) {
    m.height = n;
    m.width = n;
    m.data.assign(static_cast<std::size_t>(n) * n, 0);
  }
  BinaryMask background;
  background.height = n;
  background.width = n;
  background.data.assign(static_cast<std::size_t>(n) * n, 0);

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const float cx = (static_cast<float>(j) + 0.5f);
      const float cy = (static_cast<float>(i) + 0.5f);
      int owner = -1;
      for (std::size_t k = 0; k < discs.size(); ++k) {
        const float dx = cx - discs[k].center.x() * static_cast<float>(n);
        const float dy = cy - discs[k].center.y() * static_cast<float>(n);
        if (dx * dx + dy * dy <= discs[k].radius_px * discs[k].radius_px) {
          owner = static_cast<int>(k);
          break;
        }
      }
      if (owner >= 0) {
        entity_masks[owner].at(i, j) = 1;
        out.image.at(discs[owner].channel, i, j) = 1.0f;
      } else {
        background.at(i, j) = 1;
      }
      out.image.at(4, i, j) = (static_cast<float>(j) + 0.5f) / static_cast<float>(n);
      out.image.at(5, i, j) = (static_cast<float>(i) + 0.5f) / static_cast<float>(n);
    }
  }

  // Canonical emission order: effector, object, target, distractors,
  // background. Fully occluded entities are dropped, so N varies.
  std::vector<std::size_t> order;
  order.push_back(0);
  std::size_t target_idx = discs.size() - 1;
  if (state.object_pos) order.push_back(1);
  order.push_back(target_idx);
  for (std::size_t k = (state.object_pos ? 2 : 1); k < target_idx; ++k)
    order.push_back(k);

  for (std::size_t k : order) {
    if (entity_masks[k].area() == 0) continue;
    out.masks.masks.push_back(std::move(entity_masks[k]));
    out.masks.labels.push_back(discs[k].label);
  }
  if (cfg.include_background) {
    out.masks.masks.push_back(std::move(background));
    out.masks.labels.push_back(EntityLabel::Background);
  }
  out.masks.provenance = MaskProvenance::Oracle;
  return out;
}

PatchEncoder::PatchEncoder(int segment_dim, int patch_size, uint64_t seed)
    : segment_dim_(segment_dim), patch_size_(patch_size), seed_(seed) {
  const int flat = FeatureImage::kChannels * patch_size * patch_size;
  const float bound = 1.0f / std::sqrt(static_cast<float>(flat));
  projection_.resize(segment_dim, flat);
  Rng rng(seed, /*stream=*/0x70617463U);  // "patc"
  for (int r = 0; r < segment_dim; ++r)
    for (int c = 0; c < flat; ++c)
      projection_(r, c) = static_cast<float>(rng.uniform(-bound, bound));
}

PatchGrid patch_embed(const FeatureImage& image, const PatchEncoder& encoder) {
  const int p = encoder.patch_size();
  if (image.height % p != 0 || image.width % p != 0)
    throw ConfigError("patch_embed: image dims not divisible by patch size");

  PatchGrid grid;
  grid.grid_h = image.height / p;
  grid.grid_w = image.width / p;
  const int flat = FeatureImage::kChannels * p * p;

  MatF patches(grid.grid_h * grid.grid_w, flat);
  for (int gi = 0; gi < grid.grid_h; ++gi) {
    for (int gj = 0; gj < grid.grid_w; ++gj) {
      float* row = patches.row(gi * grid.grid_w + gj).data();
      int idx = 0;
      for (int c = 0; c < FeatureImage::kChannels; ++c)
        for (int pi = 0; pi < p; ++pi)
          for (int pj = 0; pj < p; ++pj)
            row[idx++] = image.at(c, gi * p + pi, gj * p + pj);
    }
  }
  grid.embeddings.resize(patches.rows(), encoder.segment_dim());
  grid.embeddings.noalias() = patches * encoder.projection().transpose();
  return grid;
}

}  // namespace segrl

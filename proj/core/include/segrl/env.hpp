#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segrl/observation.hpp"
#include "segrl/rng.hpp"

namespace segrl {

enum class Task { Reach, Push };

Task parse_task(const std::string& name);  // ConfigError on unknown id
std::string to_string(Task task);

// Everything is in workspace units [0,1]^2 unless the name says pixels.
struct EnvConfig {
  Task task = Task::Reach;
  int horizon = 100;
  int distractors_min = 0;
  int distractors_max = 2;
  bool include_background = true;
  double teleport_prob = 0.1;  // per distractor, per step
  int image_size = 64;
  int patch_size = 8;
  int segment_dim = 32;        // S
  uint64_t encoder_seed = 7;   // frozen random projection seed
  int min_pixels = 4;          // patch overlap threshold for extraction
  int post_process_kernel = 3; // morphology kernel for the observation path

  void validate() const;  // ConfigError on violations
};

struct Distractor {
  Eigen::Vector2f pos;
  int shape_id = 0;  // diagnostic only; all distractors render as discs
};

struct SceneState {
  Eigen::Vector2f effector_pos;
  std::optional<Eigen::Vector2f> object_pos;  // push task only
  Eigen::Vector2f target_pos;
  std::vector<Distractor> distractors;
  int step_index = 0;
  Rng rng;

  bool operator==(const SceneState& other) const;
};

struct StepResult {
  SceneState state;
  float reward = 0.0f;
  bool done = false;
};

// C x H x W feature planes: one-hot entity class over 4 channels
// (effector, target, object, distractor) plus x/y coordinate ramps.
struct FeatureImage {
  static constexpr int kChannels = 6;
  int height = 0;
  int width = 0;
  std::vector<float> data;  // channel-major, size kChannels*height*width

  float& at(int c, int i, int j) { return data[(c * height + i) * width + j]; }
  float at(int c, int i, int j) const {
    return data[(c * height + i) * width + j];
  }
};

struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> data;  // row-major, values in {0,1}

  uint8_t& at(int i, int j) { return data[i * width + j]; }
  uint8_t at(int i, int j) const { return data[i * width + j]; }
  int area() const;

  bool operator==(const BinaryMask& other) const = default;
};

enum class MaskProvenance { Oracle, Perturbed };

struct InstanceMasks {
  std::vector<BinaryMask> masks;
  std::vector<EntityLabel> labels;
  MaskProvenance provenance = MaskProvenance::Oracle;

  std::size_t count() const { return masks.size(); }
};

struct RenderResult {
  FeatureImage image;
  InstanceMasks masks;
};

// Frozen random linear map standing in for the pretrained patch encoder.
// Entries are uniform in +-1/sqrt(C*patch_size^2); immutable once built.
class PatchEncoder {
 public:
  PatchEncoder(int segment_dim, int patch_size, uint64_t seed);

  int segment_dim() const { return segment_dim_; }
  int patch_size() const { return patch_size_; }
  uint64_t seed() const { return seed_; }
  const MatF& projection() const { return projection_; }

 private:
  int segment_dim_;
  int patch_size_;
  uint64_t seed_;
  MatF projection_;  // S x (C * patch_size^2)
};

struct PatchGrid {
  int grid_h = 0;
  int grid_w = 0;
  MatF embeddings;  // (grid_h*grid_w) x S, patch (i,j) at row i*grid_w + j
};

// Entity disc radii in pixels at a 64x64 render; other resolutions scale
// proportionally.
constexpr float kEffectorRadiusPx = 4.0f;
constexpr float kObjectRadiusPx = 5.0f;
constexpr float kTargetRadiusPx = 6.0f;
constexpr float kDistractorRadiusPx = 3.0f;
constexpr float kEffectorStep = 0.05f;      // delta per unit action
constexpr float kMinSeparation = 0.1f;      // pairwise separation at reset
constexpr int kActionDim = 2;               // A
constexpr int kProprioDim = 2;              // P: effector position

SceneState env_reset(const EnvConfig& cfg, uint64_t seed);
StepResult env_step(const EnvConfig& cfg, const SceneState& state,
                    const Eigen::Vector2f& action);
RenderResult rasterize(const EnvConfig& cfg, const SceneState& state);
PatchGrid patch_embed(const FeatureImage& image, const PatchEncoder& encoder);

}  // namespace segrl

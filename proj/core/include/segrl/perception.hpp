#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "segrl/env.hpp"
#include "segrl/observation.hpp"

namespace segrl {

// Morphological opening followed by closing with a flat k x k window,
// stride 1, zero padding of (k-1)/2 per side. Outside-image pixels count as
// background for both erosion and dilation. kernel_size must be odd.
BinaryMask post_process_mask(const BinaryMask& mask, int kernel_size);
InstanceMasks post_process_masks(const InstanceMasks& masks, int kernel_size = 9);

// Building blocks, exposed for tests.
BinaryMask dilate(const BinaryMask& mask, int kernel_size);
BinaryMask erode(const BinaryMask& mask, int kernel_size);

// Entry (i,j) = number of mask-ones inside patch (i,j). Sum equals the mask
// area. Mask dims must be divisible by patch_size.
Eigen::MatrixXi count_mask_pixels_per_patch(const BinaryMask& mask,
                                            int patch_size);

// Normalized (x_min, y_min, x_max, y_max) over foreground pixels with an
// exclusive upper edge. Throws ContractViolation on an empty mask.
Eigen::Vector4f mask_bbox(const BinaryMask& mask);

// Per mask: keep patches overlapping by at least min_pixels, average their
// embeddings, and compute the bbox. Masks whose every patch falls below the
// threshold are dropped; if all drop, a single fallback segment is emitted.
// The caller attaches proprioception.
SegmentObservation extract_segment_embeddings(const InstanceMasks& masks,
                                              const PatchGrid& patches,
                                              int min_pixels = 4);

// Mean over every patch embedding; the segmentation-free ablation encoder.
Eigen::VectorXf global_encode(const PatchGrid& patches);

struct Perturbation {
  enum class Kind {
    Identity,
    SegmentDropout,
    SpuriousSegments,
    EmbeddingNoise,
    BboxJitter,
    MaskSpeckle,
  };

  Kind kind = Kind::Identity;
  double dropout_p = 0.0;
  int spurious_count = 0;
  double noise_scale = 1.0;
  double sigma = 0.0;
  double epsilon = 0.0;
  double flip_prob = 0.0;
  uint64_t seed = 0;

  static Perturbation identity();
  static Perturbation segment_dropout(double p, uint64_t seed);
  static Perturbation spurious_segments(int k, double noise_scale,
                                        uint64_t seed);
  static Perturbation embedding_noise(double sigma, uint64_t seed);
  static Perturbation bbox_jitter(double epsilon, uint64_t seed);
  static Perturbation mask_speckle(double flip_prob, uint64_t seed);

  void validate() const;
  bool applies_to_masks() const { return kind == Kind::MaskSpeckle; }
  std::string describe() const;
};

Perturbation parse_perturbation(const std::string& spec);  // e.g. "segment_dropout:p=0.3"

SegmentObservation perturb_observation(const SegmentObservation& obs,
                                       const Perturbation& perturbation,
                                       uint64_t step_salt = 0);
InstanceMasks perturb_masks(const InstanceMasks& masks,
                            const Perturbation& perturbation,
                            uint64_t step_salt = 0);

}  // namespace segrl

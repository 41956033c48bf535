#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "segrl/tape.hpp"

namespace segrl {

// Diagnostic entity tags. Carried through the pipeline for analysis and
// debugging; the networks never see them.
enum class EntityLabel : int8_t {
  Effector = 0,
  Target = 1,
  Object = 2,
  Distractor = 3,
  Background = 4,
  Fallback = 5,  // sentinel segment emitted when extraction drops everything
  Spurious = 6,  // injected by the spurious-segments perturbation
};

std::string to_string(EntityLabel label);

// One timestep's policy input: a variable-length set of segment embeddings
// with normalized boxes, plus the proprioception vector.
struct SegmentObservation {
  MatF embeddings;  // N x S
  MatF bboxes;      // N x 4, (x_min, y_min, x_max, y_max) in [0,1]
  std::vector<EntityLabel> labels;  // N
  Eigen::VectorXf proprio;          // P

  Eigen::Index count() const { return embeddings.rows(); }
};

// Zero embedding, full-image box. Keeps N >= 1 so the networks always have
// at least one key token.
SegmentObservation fallback_segment(int segment_dim,
                                    const Eigen::VectorXf& proprio);

}  // namespace segrl

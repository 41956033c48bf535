#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "segrl/observation.hpp"
#include "segrl/rng.hpp"

namespace segrl {

struct Transition {
  SegmentObservation obs;
  Eigen::VectorXf action;
  float reward = 0.0f;
  bool done = false;
  SegmentObservation next_obs;
};

// FIFO transition store with ragged observations. Segment data lives in flat
// pools (embeddings, boxes, labels) indexed by per-transition offsets; the
// pools are compacted when the evicted prefix grows past half the storage.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void add(const Transition& transition);
  // Uniform with replacement. Throws ContractViolation when size < batch.
  std::vector<Transition> sample(std::size_t batch_size, Rng& rng) const;
  Transition get(std::size_t index) const;  // 0 = oldest

  std::size_t size() const { return records_.size(); }
  std::size_t capacity() const { return capacity_; }
  int segment_dim() const { return segment_dim_; }

 private:
  struct ObsRef {
    std::size_t seg_offset = 0;  // in segments, relative to pool base
    int count = 0;
  };
  struct Record {
    ObsRef obs;
    ObsRef next_obs;
    Eigen::VectorXf obs_proprio;
    Eigen::VectorXf next_proprio;
    Eigen::VectorXf action;
    float reward = 0.0f;
    bool done = false;
  };

  ObsRef store_segments(const SegmentObservation& obs);
  SegmentObservation load(const ObsRef& ref,
                          const Eigen::VectorXf& proprio) const;
  void evict_front();
  void maybe_compact();

  std::size_t capacity_;
  int segment_dim_ = -1;
  std::size_t front_segment_ = 0;  // first live segment, global numbering
  std::size_t pool_base_ = 0;      // global index of the pools' first entry
  std::vector<float> embedding_pool_;
  std::vector<float> bbox_pool_;
  std::vector<EntityLabel> label_pool_;
  std::deque<Record> records_;
};

}  // namespace segrl

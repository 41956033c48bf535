#include "segrl/replay_buffer.hpp"

#include <algorithm>
#include <cstring>

#include "segrl/errors.hpp"

namespace segrl {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ < 1) throw ConfigError("replay buffer capacity must be >= 1");
}

ReplayBuffer::ObsRef ReplayBuffer::store_segments(
    const SegmentObservation& obs) {
  const int n = static_cast<int>(obs.count());
  const int s = static_cast<int>(obs.embeddings.cols());
  if (segment_dim_ < 0) segment_dim_ = s;
  if (s != segment_dim_ || n < 1 ||
      static_cast<int>(obs.labels.size()) != n)
    throw ContractViolation("replay buffer: malformed observation");

  ObsRef ref;
  ref.seg_offset = pool_base_ + label_pool_.size();
  ref.count = n;
  for (int i = 0; i < n; ++i) {
    const float* emb = obs.embeddings.row(i).data();
    embedding_pool_.insert(embedding_pool_.end(), emb, emb + s);
    const float* box = obs.bboxes.row(i).data();
    bbox_pool_.insert(bbox_pool_.end(), box, box + 4);
    label_pool_.push_back(obs.labels[i]);
  }
  return ref;
}

void ReplayBuffer::add(const Transition& transition) {
  Record rec;
  rec.obs = store_segments(transition.obs);
  rec.next_obs = store_segments(transition.next_obs);
  rec.obs_proprio = transition.obs.proprio;
  rec.next_proprio = transition.next_obs.proprio;
  rec.action = transition.action;
  rec.reward = transition.reward;
  rec.done = transition.done;
  records_.push_back(std::move(rec));
  while (records_.size() > capacity_) evict_front();
  maybe_compact();
}

void ReplayBuffer::evict_front() {
  const Record& front = records_.front();
  front_segment_ += static_cast<std::size_t>(front.obs.count) +
                    static_cast<std::size_t>(front.next_obs.count);
  records_.pop_front();
}

void ReplayBuffer::maybe_compact() {
  const std::size_t dead = front_segment_ - pool_base_;
  if (dead < 4096 || dead * 2 < label_pool_.size()) return;
  const std::size_t s = static_cast<std::size_t>(segment_dim_);
  embedding_pool_.erase(embedding_pool_.begin(),
                        embedding_pool_.begin() +
                            static_cast<std::ptrdiff_t>(dead * s));
  bbox_pool_.erase(bbox_pool_.begin(),
                   bbox_pool_.begin() + static_cast<std::ptrdiff_t>(dead * 4));
  label_pool_.erase(label_pool_.begin(),
                    label_pool_.begin() + static_cast<std::ptrdiff_t>(dead));
  pool_base_ = front_segment_;
}

SegmentObservation ReplayBuffer::load(const ObsRef& ref,
                                      const Eigen::VectorXf& proprio) const {
  const std::size_t s = static_cast<std::size_t>(segment_dim_);
  const std::size_t local = ref.seg_offset - pool_base_;

  SegmentObservation obs;
  obs.embeddings.resize(ref.count, segment_dim_);
  obs.bboxes.resize(ref.count, 4);
  obs.labels.resize(ref.count);
  std::memcpy(obs.embeddings.data(), embedding_pool_.data() + local * s,
              sizeof(float) * ref.count * s);
  std::memcpy(obs.bboxes.data(), bbox_pool_.data() + local * 4,
              sizeof(float) * ref.count * 4);
  std::copy_n(label_pool_.begin() + static_cast<std::ptrdiff_t>(local),
              ref.count, obs.labels.begin());
  obs.proprio = proprio;
  return obs;
}

Transition ReplayBuffer::get(std::size_t index) const {
  if (index >= records_.size())
    throw ContractViolation("replay buffer: index out of range");
  const Record& rec = records_[index];
  Transition out;
  out.obs = load(rec.obs, rec.obs_proprio);
  out.next_obs = load(rec.next_obs, rec.next_proprio);
  out.action = rec.action;
  out.reward = rec.reward;
  out.done = rec.done;
  return out;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t batch_size,
                                             Rng& rng) const {
  if (records_.size() < batch_size)
    throw ContractViolation("replay buffer: sample larger than stored data");
  std::vector<Transition> batch;
  batch.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i)
    batch.push_back(get(rng.uniform_int(records_.size())));
  return batch;
}

}  // namespace segrl

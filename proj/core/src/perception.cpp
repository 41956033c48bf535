#include "segrl/perception.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "segrl/errors.hpp"
#include "segrl/rng.hpp"

namespace segrl {

namespace {

// Keeps a normalized interval strictly ordered inside [0,1].
std::pair<float, float> valid_interval(float a, float b) {
  float lo = std::clamp(std::min(a, b), 0.0f, 1.0f);
  float hi = std::clamp(std::max(a, b), 0.0f, 1.0f);
  constexpr float kMinWidth = 1e-6f;
  if (hi - lo < kMinWidth) {
    if (hi + kMinWidth <= 1.0f) {
      hi = hi + kMinWidth;
    } else {
      lo = hi - kMinWidth;
    }
  }
  return {lo, hi};
}

SegmentObservation only_fallback(const SegmentObservation& like) {
  return fallback_segment(static_cast<int>(like.embeddings.cols()),
                          like.proprio);
}

}  // namespace

Eigen::MatrixXi count_mask_pixels_per_patch(const BinaryMask& mask,
                                            int patch_size) {
  if (patch_size < 1 || mask.height % patch_size != 0 ||
      mask.width % patch_size != 0)
    throw ConfigError("count_mask_pixels_per_patch: dims not divisible");
  const int gh = mask.height / patch_size;
  const int gw = mask.width / patch_size;
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(gh, gw);
  for (int i = 0; i < mask.height; ++i)
    for (int j = 0; j < mask.width; ++j)
      counts(i / patch_size, j / patch_size) += mask.at(i, j);
  return counts;
}

Eigen::Vector4f mask_bbox(const BinaryMask& mask) {
  int x_min = mask.width, x_max = -1, y_min = mask.height, y_max = -1;
  for (int i = 0; i < mask.height; ++i) {
    for (int j = 0; j < mask.width; ++j) {
      if (!mask.at(i, j)) continue;
      x_min = std::min(x_min, j);
      x_max = std::max(x_max, j);
      y_min = std::min(y_min, i);
      y_max = std::max(y_max, i);
    }
  }
  if (x_max < 0) throw ContractViolation("mask_bbox: empty mask");
  return {static_cast<float>(x_min) / static_cast<float>(mask.width),
          static_cast<float>(y_min) / static_cast<float>(mask.height),
          static_cast<float>(x_max + 1) / static_cast<float>(mask.width),
          static_cast<float>(y_max + 1) / static_cast<float>(mask.height)};
}

SegmentObservation extract_segment_embeddings(const InstanceMasks& masks,
                                              const PatchGrid& patches,
                                              int min_pixels) {
  if (min_pixels < 1)
    throw ConfigError("extract_segment_embeddings: min_pixels must be >= 1");
  const int S = static_cast<int>(patches.embeddings.cols());

  std::vector<Eigen::VectorXf> embeddings;
  std::vector<Eigen::Vector4f> boxes;
  std::vector<EntityLabel> labels;

  for (std::size_t m = 0; m < masks.count(); ++m) {
    const BinaryMask& mask = masks.masks[m];
    if (mask.height % patches.grid_h != 0)
      throw ConfigError("extract_segment_embeddings: mask/grid mismatch");
    const int patch = mask.height / patches.grid_h;
    Eigen::MatrixXi counts = count_mask_pixels_per_patch(mask, patch);

    Eigen::VectorXd acc = Eigen::VectorXd::Zero(S);
    int kept = 0;
    for (int gi = 0; gi < patches.grid_h; ++gi) {
      for (int gj = 0; gj < patches.grid_w; ++gj) {
        if (counts(gi, gj) < min_pixels) continue;
        acc += patches.embeddings.row(gi * patches.grid_w + gj)
                   .cast<double>()
                   .transpose();
        ++kept;
      }
    }
    if (kept == 0) continue;
    embeddings.push_back((acc / kept).cast<float>());
    boxes.push_back(mask_bbox(mask));
    labels.push_back(masks.labels[m]);
  }

  SegmentObservation obs;
  if (embeddings.empty()) return fallback_segment(S, Eigen::VectorXf());

  obs.embeddings.resize(static_cast<Eigen::Index>(embeddings.size()), S);
  obs.bboxes.resize(static_cast<Eigen::Index>(embeddings.size()), 4);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    obs.embeddings.row(static_cast<Eigen::Index>(i)) = embeddings[i].transpose();
    obs.bboxes.row(static_cast<Eigen::Index>(i)) = boxes[i].transpose();
  }
  obs.labels = std::move(labels);
  return obs;
}

Eigen::VectorXf global_encode(const PatchGrid& patches) {
  if (patches.embeddings.rows() == 0)
    throw ContractViolation("global_encode: empty patch grid");
  Eigen::VectorXd acc =
      patches.embeddings.cast<double>().colwise().mean().transpose();
  return acc.cast<float>();
}

Perturbation Perturbation::identity() { return {}; }

Perturbation Perturbation::segment_dropout(double p, uint64_t seed) {
  Perturbation out;
  out.kind = Kind::SegmentDropout;
  out.dropout_p = p;
  out.seed = seed;
  out.validate();
  return out;
}

Perturbation Perturbation::spurious_segments(int k, double noise_scale,
                                             uint64_t seed) {
  Perturbation out;
  out.kind = Kind::SpuriousSegments;
  out.spurious_count = k;
  out.noise_scale = noise_scale;
  out.seed = seed;
  out.validate();
  return out;
}

Perturbation Perturbation::embedding_noise(double sigma, uint64_t seed) {
  Perturbation out;
  out.kind = Kind::EmbeddingNoise;
  out.sigma = sigma;
  out.seed = seed;
  out.validate();
  return out;
}

Perturbation Perturbation::bbox_jitter(double epsilon, uint64_t seed) {
  Perturbation out;
  out.kind = Kind::BboxJitter;
  out.epsilon = epsilon;
  out.seed = seed;
  out.validate();
  return out;
}

Perturbation Perturbation::mask_speckle(double flip_prob, uint64_t seed) {
  Perturbation out;
  out.kind = Kind::MaskSpeckle;
  out.flip_prob = flip_prob;
  out.seed = seed;
  out.validate();
  return out;
}

void Perturbation::validate() const {
  if (dropout_p < 0.0 || dropout_p >= 1.0)
    throw ConfigError("perturbation: dropout p must be in [0,1)");
  if (spurious_count < 0) throw ConfigError("perturbation: k must be >= 0");
  if (sigma < 0.0 || epsilon < 0.0 || flip_prob < 0.0 || noise_scale < 0.0)
    throw ConfigError("perturbation: scales must be >= 0");
}

std::string Perturbation::describe() const {
  std::ostringstream out;
  switch (kind) {
    case Kind::Identity: out << "identity"; break;
    case Kind::SegmentDropout: out << "segment_dropout:p=" << dropout_p; break;
    case Kind::SpuriousSegments:
      out << "spurious_segments:k=" << spurious_count
          << ",noise=" << noise_scale;
      break;
    case Kind::EmbeddingNoise: out << "embedding_noise:sigma=" << sigma; break;
    case Kind::BboxJitter: out << "bbox_jitter:eps=" << epsilon; break;
    case Kind::MaskSpeckle: out << "mask_speckle:p=" << flip_prob; break;
  }
  return out.str();
}

Perturbation parse_perturbation(const std::string& spec) {
  std::string name = spec;
  std::string args;
  if (auto colon = spec.find(':'); colon != std::string::npos) {
    name = spec.substr(0, colon);
    args = spec.substr(colon + 1);
  }
  auto get = [&args](const std::string& key, double fallback) {
    std::istringstream in(args);
    std::string token;
    while (std::getline(in, token, ',')) {
      auto eq = token.find('=');
      if (eq == std::string::npos) continue;
      if (token.substr(0, eq) == key) return std::stod(token.substr(eq + 1));
    }
    return fallback;
  };
  uint64_t seed = static_cast<uint64_t>(get("seed", 0));
  if (name == "identity") return Perturbation::identity();
  if (name == "segment_dropout")
    return Perturbation::segment_dropout(get("p", 0.1), seed);
  if (name == "spurious_segments")
    return Perturbation::spurious_segments(static_cast<int>(get("k", 1)),
                                           get("noise", 1.0), seed);
  if (name == "embedding_noise")
    return Perturbation::embedding_noise(get("sigma", 0.1), seed);
  if (name == "bbox_jitter")
    return Perturbation::bbox_jitter(get("eps", 0.05), seed);
  if (name == "mask_speckle")
    return Perturbation::mask_speckle(get("p", 0.01), seed);
  throw ConfigError("unknown perturbation kind: '" + name + "'");
}

SegmentObservation perturb_observation(const SegmentObservation& obs,
                                       const Perturbation& perturbation,
                                       uint64_t step_salt) {
  perturbation.validate();
  Rng rng(hash_combine(perturbation.seed, step_salt), /*stream=*/0x70657274U);

  switch (perturbation.kind) {
    case Perturbation::Kind::Identity:
    case Perturbation::Kind::MaskSpeckle:
      return obs;

    case Perturbation::Kind::SegmentDropout: {
      std::vector<Eigen::Index> keep;
      for (Eigen::Index i = 0; i < obs.count(); ++i) {
        const bool is_fallback = obs.labels[i] == EntityLabel::Fallback;
        if (is_fallback || !rng.bernoulli(perturbation.dropout_p))
          keep.push_back(i);
      }
      if (keep.empty()) return only_fallback(obs);
      SegmentObservation out;
      out.embeddings.resize(static_cast<Eigen::Index>(keep.size()),
                            obs.embeddings.cols());
      out.bboxes.resize(static_cast<Eigen::Index>(keep.size()), 4);
      for (std::size_t i = 0; i < keep.size(); ++i) {
        out.embeddings.row(static_cast<Eigen::Index>(i)) =
            obs.embeddings.row(keep[i]);
        out.bboxes.row(static_cast<Eigen::Index>(i)) = obs.bboxes.row(keep[i]);
        out.labels.push_back(obs.labels[keep[i]]);
      }
      out.proprio = obs.proprio;
      return out;
    }

    case Perturbation::Kind::SpuriousSegments: {
      const Eigen::Index n = obs.count();
      const Eigen::Index k = perturbation.spurious_count;
      SegmentObservation out;
      out.embeddings.resize(n + k, obs.embeddings.cols());
      out.bboxes.resize(n + k, 4);
      out.embeddings.topRows(n) = obs.embeddings;
      out.bboxes.topRows(n) = obs.bboxes;
      out.labels = obs.labels;
      for (Eigen::Index i = 0; i < k; ++i) {
        for (Eigen::Index c = 0; c < obs.embeddings.cols(); ++c)
          out.embeddings(n + i, c) = static_cast<float>(
              perturbation.noise_scale * rng.normal());
        auto [x0, x1] = valid_interval(static_cast<float>(rng.uniform()),
                                       static_cast<float>(rng.uniform()));
        auto [y0, y1] = valid_interval(static_cast<float>(rng.uniform()),
                                       static_cast<float>(rng.uniform()));
        out.bboxes.row(n + i) << x0, y0, x1, y1;
        out.labels.push_back(EntityLabel::Spurious);
      }
      out.proprio = obs.proprio;
      return out;
    }

    case Perturbation::Kind::EmbeddingNoise: {
      SegmentObservation out = obs;
      for (Eigen::Index i = 0; i < out.embeddings.rows(); ++i)
        for (Eigen::Index c = 0; c < out.embeddings.cols(); ++c)
          out.embeddings(i, c) +=
              static_cast<float>(perturbation.sigma * rng.normal());
      return out;
    }

    case Perturbation::Kind::BboxJitter: {
      SegmentObservation out = obs;
      for (Eigen::Index i = 0; i < out.bboxes.rows(); ++i) {
        float x0 = out.bboxes(i, 0) +
                   static_cast<float>(rng.uniform(-perturbation.epsilon,
                                                  perturbation.epsilon));
        float y0 = out.bboxes(i, 1) +
                   static_cast<float>(rng.uniform(-perturbation.epsilon,
                                                  perturbation.epsilon));
        float x1 = out.bboxes(i, 2) +
                   static_cast<float>(rng.uniform(-perturbation.epsilon,
                                                  perturbation.epsilon));
        float y1 = out.bboxes(i, 3) +
                   static_cast<float>(rng.uniform(-perturbation.epsilon,
                                                  perturbation.epsilon));
        auto [xa, xb] = valid_interval(x0, x1);
        auto [ya, yb] = valid_interval(y0, y1);
        out.bboxes.row(i) << xa, ya, xb, yb;
      }
      return out;
    }
  }
  return obs;
}

InstanceMasks perturb_masks(const InstanceMasks& masks,
                            const Perturbation& perturbation,
                            uint64_t step_salt) {
  perturbation.validate();
  if (perturbation.kind != Perturbation::Kind::MaskSpeckle) return masks;
  Rng rng(hash_combine(perturbation.seed, step_salt), /*stream=*/0x73706b6cU);
  InstanceMasks out = masks;
  for (auto& mask : out.masks)
    for (auto& px : mask.data)
      if (rng.bernoulli(perturbation.flip_prob)) px ^= 1;
  out.provenance = MaskProvenance::Perturbed;
  return out;
}

}  // namespace segrl

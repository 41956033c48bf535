#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "segrl/observation.hpp"
#include "segrl/policy.hpp"
#include "segrl/rng.hpp"

namespace segrl::testing {

inline SegmentObservation random_obs(Rng& rng, int n, int s, int p) {
  SegmentObservation obs;
  obs.embeddings.resize(n, s);
  obs.bboxes.resize(n, 4);
  obs.labels.assign(n, EntityLabel::Distractor);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < s; ++c)
      obs.embeddings(i, c) = static_cast<float>(rng.normal());
    float x0 = static_cast<float>(rng.uniform(0.0, 0.9));
    float y0 = static_cast<float>(rng.uniform(0.0, 0.9));
    obs.bboxes.row(i) << x0, y0, x0 + 0.1f, y0 + 0.1f;
  }
  obs.proprio = Eigen::VectorXf(p);
  for (int i = 0; i < p; ++i)
    obs.proprio[i] = static_cast<float>(rng.uniform());
  return obs;
}

template <class S>
Mat<S> random_mat(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                  double scale = 1.0) {
  Mat<S> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = static_cast<S>(scale * rng.normal());
  return m;
}

// Relative difference between two gradient matrices by Frobenius norm.
template <class S>
double rel_error(const Mat<S>& a, const Mat<S>& b) {
  const double num = (a - b).template cast<double>().norm();
  const double den =
      std::max({a.template cast<double>().norm(),
                b.template cast<double>().norm(), 1e-12});
  return num / den;
}

// Central finite differences of loss() with respect to one store entry.
template <class S, class LossFn>
Mat<S> fd_gradient(ParamStoreT<S>& store, int id, LossFn&& loss, double h) {
  Mat<S>& value = store.value(id);
  Mat<S> grad(value.rows(), value.cols());
  for (Eigen::Index r = 0; r < value.rows(); ++r) {
    for (Eigen::Index c = 0; c < value.cols(); ++c) {
      const S original = value(r, c);
      value(r, c) = original + static_cast<S>(h);
      const double up = loss();
      value(r, c) = original - static_cast<S>(h);
      const double down = loss();
      value(r, c) = original;
      grad(r, c) = static_cast<S>((up - down) / (2.0 * h));
    }
  }
  return grad;
}

}  // namespace segrl::testing

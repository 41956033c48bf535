#pragma once

#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "segrl/rng.hpp"
#include "segrl/tape.hpp"

namespace segrl {

// Initialization class of a parameter array.
enum class ParamKind {
  Weight,  // uniform +-1/sqrt(fan_in), fan_in = input rows
  Bias,    // zero
  Gain,    // one (layer norm scale)
  Shift,   // zero (layer norm offset)
  Token,   // normal, scale 0.02 (type encodings, learned query tokens)
  Scalar,  // zero (log temperature)
};

// Flat collection of named parameter arrays. Registration order is the
// stable manifest order used by checkpoints.
template <class S>
class ParamStoreT {
 public:
  struct Entry {
    std::string name;
    ParamKind kind;
    Mat<S> value;
  };

  int add(const std::string& name, ParamKind kind, Eigen::Index rows,
          Eigen::Index cols);
  int find(const std::string& name) const;  // -1 when absent
  int require(const std::string& name) const;

  Mat<S>& value(int id) { return entries_[id].value; }
  const Mat<S>& value(int id) const { return entries_[id].value; }
  Mat<S>& value(const std::string& name) { return entries_[require(name)].value; }
  const Mat<S>& value(const std::string& name) const {
    return entries_[require(name)].value;
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  std::vector<int> ids_with_prefix(const std::string& prefix) const;

  // Fills values according to each entry's kind; deterministic given seed.
  void init_values(uint64_t seed);

  template <class T>
  ParamStoreT<T> cast() const {
    ParamStoreT<T> out;
    for (const auto& e : entries_) {
      int id = out.add(e.name, e.kind, e.value.rows(), e.value.cols());
      out.value(id) = e.value.template cast<T>();
    }
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> index_;
};

using ParamStore = ParamStoreT<float>;

// target <- (1 - tau) * target + tau * online, matched entry-by-entry under
// the two prefixes. Structure mismatch throws ContractViolation.
template <class S>
void soft_update(ParamStoreT<S>& store, const std::string& online_prefix,
                 const std::string& target_prefix, S tau);

// Leaf bindings created while building a forward pass: which store entry
// each tape leaf corresponds to.
template <class S>
struct BoundParams {
  std::vector<std::pair<int, typename Tape<S>::Var>> items;

  void append(const BoundParams& other) {
    items.insert(items.end(), other.items.begin(), other.items.end());
  }
};

// Binds store entries onto a tape, once per entry. Non-trainable binders
// create constants so no gradient work happens behind them.
template <class S>
class Binder {
 public:
  Binder(Tape<S>& tape, const ParamStoreT<S>& store, bool trainable)
      : tape_(tape), store_(store), trainable_(trainable) {}

  typename Tape<S>::Var operator()(const std::string& name);
  const BoundParams<S>& bound() const { return bound_; }

 private:
  Tape<S>& tape_;
  const ParamStoreT<S>& store_;
  bool trainable_;
  std::unordered_map<int, typename Tape<S>::Var> cache_;
  BoundParams<S> bound_;
};

template <class S>
class AdamT {
 public:
  AdamT() = default;
  AdamT(std::vector<int> param_ids, double lr, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8);

  // Applies one update using gradients pulled from the tape for the bound
  // leaves that belong to this optimizer's parameter set.
  void step(ParamStoreT<S>& store, const BoundParams<S>& bound,
            const Tape<S>& tape);

  long steps_taken() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  std::unordered_set<int> ids_;
  std::unordered_map<int, std::pair<Mat<S>, Mat<S>>> moments_;  // m, v
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

using Adam = AdamT<float>;

extern template class ParamStoreT<float>;
extern template class ParamStoreT<double>;
extern template class Binder<float>;
extern template class Binder<double>;
extern template class AdamT<float>;
extern template class AdamT<double>;
extern template void soft_update<float>(ParamStoreT<float>&, const std::string&,
                                        const std::string&, float);
extern template void soft_update<double>(ParamStoreT<double>&,
                                         const std::string&,
                                         const std::string&, double);

}  // namespace segrl

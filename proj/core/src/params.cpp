#include "segrl/params.hpp"

#include <cmath>

#include "segrl/errors.hpp"

namespace segrl {

template <class S>
int ParamStoreT<S>::add(const std::string& name, ParamKind kind,
                        Eigen::Index rows, Eigen::Index cols) {
  if (index_.count(name))
    throw ContractViolation("param store: duplicate name " + name);
  Entry e;
  e.name = name;
  e.kind = kind;
  e.value = Mat<S>::Zero(rows, cols);
  entries_.push_back(std::move(e));
  int id = static_cast<int>(entries_.size()) - 1;
  index_[name] = id;
  return id;
}

template <class S>
int ParamStoreT<S>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

template <class S>
int ParamStoreT<S>::require(const std::string& name) const {
  int id = find(name);
  if (id < 0) throw ContractViolation("param store: missing entry " + name);
  return id;
}

template <class S>
std::vector<int> ParamStoreT<S>::ids_with_prefix(
    const std::string& prefix) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name.rfind(prefix, 0) == 0) out.push_back(static_cast<int>(i));
  return out;
}

template <class S>
void ParamStoreT<S>::init_values(uint64_t seed) {
  Rng rng(seed, /*stream=*/0x696e6974U);  // "init"
  for (auto& e : entries_) {
    switch (e.kind) {
      case ParamKind::Weight: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(e.value.rows()));
        for (Eigen::Index r = 0; r < e.value.rows(); ++r)
          for (Eigen::Index c = 0; c < e.value.cols(); ++c)
            e.value(r, c) = static_cast<S>(rng.uniform(-bound, bound));
        break;
      }
      case ParamKind::Token: {
        for (Eigen::Index r = 0; r < e.value.rows(); ++r)
          for (Eigen::Index c = 0; c < e.value.cols(); ++c)
            e.value(r, c) = static_cast<S>(0.02 * rng.normal());
        break;
      }
      case ParamKind::Gain:
        e.value.setConstant(S(1));
        break;
      case ParamKind::Bias:
      case ParamKind::Shift:
      case ParamKind::Scalar:
        e.value.setZero();
        break;
    }
  }
}

template <class S>
void soft_update(ParamStoreT<S>& store, const std::string& online_prefix,
                 const std::string& target_prefix, S tau) {
  std::vector<int> online = store.ids_with_prefix(online_prefix);
  std::vector<int> target = store.ids_with_prefix(target_prefix);
  if (online.empty() || online.size() != target.size())
    throw ContractViolation("soft_update: parameter trees do not match");
  for (std::size_t i = 0; i < online.size(); ++i) {
    const auto& src = store.entries()[online[i]];
    auto& dst = store.entries()[target[i]];
    if (src.name.substr(online_prefix.size()) !=
            dst.name.substr(target_prefix.size()) ||
        src.value.rows() != dst.value.rows() ||
        src.value.cols() != dst.value.cols())
      throw ContractViolation("soft_update: structure mismatch at " + src.name);
    dst.value = (S(1) - tau) * dst.value + tau * src.value;
  }
}

template <class S>
typename Tape<S>::Var Binder<S>::operator()(const std::string& name) {
  int id = store_.require(name);
  auto it = cache_.find(id);
  if (it != cache_.end()) return it->second;
  typename Tape<S>::Var var;
  if (trainable_) {
    var = tape_.leaf(store_.value(id));
    bound_.items.push_back({id, var});
  } else {
    var = tape_.constant(store_.value(id));
  }
  cache_[id] = var;
  return var;
}

template <class S>
AdamT<S>::AdamT(std::vector<int> param_ids, double lr, double beta1,
                double beta2, double eps)
    : ids_(param_ids.begin(), param_ids.end()),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {}

template <class S>
void AdamT<S>::step(ParamStoreT<S>& store, const BoundParams<S>& bound,
                    const Tape<S>& tape) {
  ++t_;
  const S bc1 = S(1) - static_cast<S>(std::pow(beta1_, t_));
  const S bc2 = S(1) - static_cast<S>(std::pow(beta2_, t_));
  for (const auto& [id, var] : bound.items) {
    if (!ids_.count(id)) continue;
    const Mat<S>& g = tape.grad(var);
    auto& [m, v] = moments_[id];
    if (m.size() == 0) {
      m = Mat<S>::Zero(g.rows(), g.cols());
      v = Mat<S>::Zero(g.rows(), g.cols());
    }
    m = static_cast<S>(beta1_) * m + (S(1) - static_cast<S>(beta1_)) * g;
    v = static_cast<S>(beta2_) * v +
        (S(1) - static_cast<S>(beta2_)) * g.cwiseProduct(g);
    Mat<S> mhat = m / bc1;
    Mat<S> vhat = v / bc2;
    store.value(id).array() -=
        static_cast<S>(lr_) * mhat.array() /
        (vhat.array().sqrt() + static_cast<S>(eps_));
  }
}

template class ParamStoreT<float>;
template class ParamStoreT<double>;
template class Binder<float>;
template class Binder<double>;
template class AdamT<float>;
template class AdamT<double>;
template void soft_update<float>(ParamStoreT<float>&, const std::string&,
                                 const std::string&, float);
template void soft_update<double>(ParamStoreT<double>&, const std::string&,
                                  const std::string&, double);

}  // namespace segrl

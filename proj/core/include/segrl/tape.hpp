#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "segrl/errors.hpp"

namespace segrl {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

// Reverse-mode autodiff over dense matrices. Nodes are recorded in creation
// order; backward() walks them in reverse. One Tape per forward/backward
// pass, no global state, safe to use from multiple threads as long as each
// thread owns its tape.
template <class S>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat<S> v) { return push(std::move(v), false, {}, nullptr); }
  Var leaf(Mat<S> v) { return push(std::move(v), true, {}, nullptr); }

  const Mat<S>& val(Var v) const { return node(v).value; }
  // Valid after backward(); zero matrix if the node never received gradient.
  const Mat<S>& grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss);

  // --- ops ---------------------------------------------------------------
  Var matmul(Var a, Var b);     // A(m,k) * B(k,n)
  Var matmul_nt(Var a, Var b);  // A(m,k) * B(n,k)^T
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);      // elementwise
  Var min_elt(Var a, Var b);  // ties route gradient to a
  Var add_rowvec(Var a, Var v);
  Var scale(Var a, S c);
  Var add_const(Var a, S c);
  Var relu(Var a);
  Var tanh_op(Var a);
  Var exp_op(Var a);
  Var log_op(Var a);
  Var clamp(Var a, S lo, S hi);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_rows(Var a, Eigen::Index r0, Eigen::Index n);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var a, Eigen::Index c0, Eigen::Index n);
  Var repeat_row(Var v, Eigen::Index n);  // 1xC -> nxC
  Var row_sum(Var a);                     // BxC -> Bx1
  Var sum_all(Var a);                     // -> 1x1
  Var mean_all(Var a);                    // -> 1x1
  Var layer_norm_rows(Var x, Var gain, Var shift, S eps);
  // softmax over rows of (logits + additive_mask); mask entries are 0 or -inf
  Var softmax_rows(Var logits, const Mat<S>& additive_mask);
  Var softmax_rows(Var logits);

  // Multi-head attention where query row b attends only to key/value rows
  // [blocks[b].start, blocks[b].start + blocks[b].len) plus the optional
  // blocks[b].extra row. Equivalent to dense attention under the matching
  // -inf visibility mask, without materializing the dense score matrix.
  struct BlockSpec {
    int start = 0;
    int len = 0;
    int extra = -1;
  };
  Var block_attention(Var queries, Var keys, Var values,
                      const std::vector<BlockSpec>& blocks, int heads,
                      std::vector<Mat<S>>* probs_out = nullptr);

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool needs_grad = false;
    std::function<void(Tape&)> back;
  };

  std::vector<Node> nodes_;

  Node& node(Var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw ContractViolation("tape: invalid var id");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw ContractViolation("tape: invalid var id");
    return nodes_[v.id];
  }

  Var push(Mat<S> value, bool needs, const std::vector<Var>& parents,
           std::function<void(Tape&)> back);
  bool any_needs(const std::vector<Var>& parents) const;
  Mat<S>& g(Var v);  // grad matrix, allocated and zeroed on first use
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace segrl

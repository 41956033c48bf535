#include "segrl/tape.hpp"

#include <cmath>

namespace segrl {

namespace {
void require(bool cond, const char* what) {
  if (!cond) throw ContractViolation(std::string("tape: ") + what);
}
}  // namespace

template <class S>
typename Tape<S>::Var Tape<S>::push(Mat<S> value, bool needs,
                                    const std::vector<Var>& /*parents*/,
                                    std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <class S>
bool Tape<S>::any_needs(const std::vector<Var>& parents) const {
  for (Var p : parents)
    if (node(p).needs_grad) return true;
  return false;
}

template <class S>
Mat<S>& Tape<S>::g(Var v) {
  Node& n = node(v);
  if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <class S>
const Mat<S>& Tape<S>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.size() == 0) {
    auto& mut = const_cast<Node&>(n);
    mut.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

template <class S>
void Tape<S>::backward(Var loss) {
  require(node(loss).value.rows() == 1 && node(loss).value.cols() == 1,
          "backward expects a 1x1 loss");
  g(loss)(0, 0) = S(1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.back || n.grad.size() == 0) continue;
    n.back(*this);
  }
}

template <class S>
typename Tape<S>::Var Tape<S>::matmul(Var a, Var b) {
  const Mat<S>& A = val(a);
  const Mat<S>& B = val(b);
  require(A.cols() == B.rows(), "matmul shape mismatch");
  Mat<S> out(A.rows(), B.cols());
  out.noalias() = A * B;
  bool needs = any_needs({a, b});
  if (!needs) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, b, self](Tape& t) {
    const Mat<S>& G = t.node(self).grad;
    if (t.node(a).needs_grad) t.g(a).noalias() += G * t.val(b).transpose();
    if (t.node(b).needs_grad) t.g(b).noalias() += t.val(a).transpose() * G;
  };
  return push(std::move(out), true, {a, b}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::matmul_nt(Var a, Var b) {
  const Mat<S>& A = val(a);
  const Mat<S>& B = val(b);
  require(A.cols() == B.cols(), "matmul_nt shape mismatch");
  Mat<S> out(A.rows(), B.rows());
  out.noalias() = A * B.transpose();
  bool needs = any_needs({a, b});
  if (!needs) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, b, self](Tape& t) {
    const Mat<S>& G = t.node(self).grad;
    if (t.node(a).needs_grad) t.g(a).noalias() += G * t.val(b);
    if (t.node(b).needs_grad) t.g(b).noalias() += G.transpose() * t.val(a);
  };
  return push(std::move(out), true, {a, b}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::add(Var a, Var b) {
  require(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
          "add shape mismatch");
  Mat<S> out = val(a) + val(b);
  if (!any_needs({a, b})) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, b, self](Tape& t) {
    const Mat<S>& G = t.node(self).grad;
    if (t.node(a).needs_grad) t.g(a) += G;
    if (t.node(b).needs_grad) t.g(b) += G;
  };
  return push(std::move(out), true, {a, b}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::sub(Var a, Var b) {
  require(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
          "sub shape mismatch");
  Mat<S> out = val(a) - val(b);
  if (!any_needs({a, b})) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, b, self](Tape& t) {
    const Mat<S>& G = t.node(self).grad;
    if (t.node(a).needs_grad) t.g(a) += G;
    if (t.node(b).needs_grad) t.g(b) -= G;
  };
  return push(std::move(out), true, {a, b}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::mul(Var a, Var b) {
  require(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
          "mul shape mismatch");
  Mat<S> out = val(a).cwiseProduct(val(b));
  if (!any_needs({a, b})) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, b, self](Tape& t) {
    const Mat<S>& G = t.node(self).grad;
    if (t.node(a).needs_grad) t.g(a) += G.cwiseProduct(t.val(b));
    if (t.node(b).needs_grad) t.g(b) += G.cwiseProduct(t.val(a));
  };
  return push(std::move(out), true, {a, b}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::min_elt(Var a, Var b) {
  require(val(a).rows() == val(b).rows() && val(a).cols() == val(b).cols(),
          "min_elt shape mismatch");
  Mat<S> out = val(a).cwiseMin(val(b));
  if (!any_needs({a, b})) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, b, self](Tape& t) {
    const Mat<S>& G = t.node(self).grad;
    Mat<S> take_a =
        (t.val(a).array() <= t.val(b).array()).template cast<S>().matrix();
    if (t.node(a).needs_grad) t.g(a) += G.cwiseProduct(take_a);
    if (t.node(b).needs_grad)
      t.g(b) += G.cwiseProduct((Mat<S>::Ones(take_a.rows(), take_a.cols()) - take_a));
  };
  return push(std::move(out), true, {a, b}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::add_rowvec(Var a, Var v) {
  require(val(v).rows() == 1 && val(v).cols() == val(a).cols(),
          "add_rowvec expects 1xC vector");
  Mat<S> out = val(a);
  out.rowwise() += val(v).row(0);
  if (!any_needs({a, v})) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, v, self](Tape& t) {
    const Mat<S>& G = t.node(self).grad;
    if (t.node(a).needs_grad) t.g(a) += G;
    if (t.node(v).needs_grad) t.g(v).row(0) += G.colwise().sum();
  };
  return push(std::move(out), true, {a, v}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::scale(Var a, S c) {
  Mat<S> out = val(a) * c;
  if (!node(a).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, c, self](Tape& t) { t.g(a) += t.node(self).grad * c; };
  return push(std::move(out), true, {a}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::add_const(Var a, S c) {
  Mat<S> out = val(a).array() + c;
  if (!node(a).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, self](Tape& t) { t.g(a) += t.node(self).grad; };
  return push(std::move(out), true, {a}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::relu(Var a) {
  Mat<S> out = val(a).cwiseMax(S(0));
  if (!node(a).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, self](Tape& t) {
    Mat<S> mask = (t.val(a).array() > S(0)).template cast<S>().matrix();
    t.g(a) += t.node(self).grad.cwiseProduct(mask);
  };
  return push(std::move(out), true, {a}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::tanh_op(Var a) {
  Mat<S> out = val(a).array().tanh().matrix();
  if (!node(a).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, self](Tape& t) {
    const Mat<S>& y = t.node(self).value;
    t.g(a).array() +=
        t.node(self).grad.array() * (S(1) - y.array().square());
  };
  return push(std::move(out), true, {a}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::exp_op(Var a) {
  Mat<S> out = val(a).array().exp().matrix();
  if (!node(a).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, self](Tape& t) {
    t.g(a).array() += t.node(self).grad.array() * t.node(self).value.array();
  };
  return push(std::move(out), true, {a}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::log_op(Var a) {
  Mat<S> out = val(a).array().log().matrix();
  if (!node(a).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, self](Tape& t) {
    t.g(a).array() += t.node(self).grad.array() / t.val(a).array();
  };
  return push(std::move(out), true, {a}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::clamp(Var a, S lo, S hi) {
  Mat<S> out = val(a).cwiseMax(lo).cwiseMin(hi);
  if (!node(a).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, lo, hi, self](Tape& t) {
    Mat<S> mask = ((t.val(a).array() >= lo) && (t.val(a).array() <= hi))
                      .template cast<S>()
                      .matrix();
    t.g(a) += t.node(self).grad.cwiseProduct(mask);
  };
  return push(std::move(out), true, {a}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows of nothing");
  Eigen::Index rows = 0;
  Eigen::Index cols = val(parts[0]).cols();
  for (Var p : parts) {
    require(val(p).cols() == cols, "concat_rows column mismatch");
    rows += val(p).rows();
  }
  Mat<S> out(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, val(p).rows()) = val(p);
    r += val(p).rows();
  }
  if (!any_needs(parts)) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  std::vector<Var> ps = parts;
  auto back = [ps, self](Tape& t) {
    const Mat<S>& G = t.node(self).grad;
    Eigen::Index r = 0;
    for (Var p : ps) {
      Eigen::Index n = t.val(p).rows();
      if (t.node(p).needs_grad) t.g(p) += G.middleRows(r, n);
      r += n;
    }
  };
  return push(std::move(out), true, parts, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::slice_rows(Var a, Eigen::Index r0,
                                          Eigen::Index n) {
  require(r0 >= 0 && n >= 0 && r0 + n <= val(a).rows(), "slice_rows bounds");
  Mat<S> out = val(a).middleRows(r0, n);
  if (!node(a).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, r0, n, self](Tape& t) {
    t.g(a).middleRows(r0, n) += t.node(self).grad;
  };
  return push(std::move(out), true, {a}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols of nothing");
  Eigen::Index cols = 0;
  Eigen::Index rows = val(parts[0]).rows();
  for (Var p : parts) {
    require(val(p).rows() == rows, "concat_cols row mismatch");
    cols += val(p).cols();
  }
  Mat<S> out(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    out.middleCols(c, val(p).cols()) = val(p);
    c += val(p).cols();
  }
  if (!any_needs(parts)) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  std::vector<Var> ps = parts;
  auto back = [ps, self](Tape& t) {
    const Mat<S>& G = t.node(self).grad;
    Eigen::Index c = 0;
    for (Var p : ps) {
      Eigen::Index n = t.val(p).cols();
      if (t.node(p).needs_grad) t.g(p) += G.middleCols(c, n);
      c += n;
    }
  };
  return push(std::move(out), true, parts, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::slice_cols(Var a, Eigen::Index c0,
                                          Eigen::Index n) {
  require(c0 >= 0 && n >= 0 && c0 + n <= val(a).cols(), "slice_cols bounds");
  Mat<S> out = val(a).middleCols(c0, n);
  if (!node(a).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, c0, n, self](Tape& t) {
    t.g(a).middleCols(c0, n) += t.node(self).grad;
  };
  return push(std::move(out), true, {a}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::repeat_row(Var v, Eigen::Index n) {
  require(val(v).rows() == 1, "repeat_row expects a row vector");
  Mat<S> out = val(v).replicate(n, 1);
  if (!node(v).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [v, self](Tape& t) {
    t.g(v).row(0) += t.node(self).grad.colwise().sum();
  };
  return push(std::move(out), true, {v}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::row_sum(Var a) {
  Mat<S> out = val(a).rowwise().sum();
  if (!node(a).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, self](Tape& t) {
    t.g(a) += t.node(self).grad.replicate(1, t.val(a).cols());
  };
  return push(std::move(out), true, {a}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::sum_all(Var a) {
  Mat<S> out(1, 1);
  out(0, 0) = val(a).sum();
  if (!node(a).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, self](Tape& t) {
    t.g(a).array() += t.node(self).grad(0, 0);
  };
  return push(std::move(out), true, {a}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::mean_all(Var a) {
  Mat<S> out(1, 1);
  out(0, 0) = val(a).mean();
  if (!node(a).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [a, self](Tape& t) {
    S inv = S(1) / static_cast<S>(t.val(a).size());
    t.g(a).array() += t.node(self).grad(0, 0) * inv;
  };
  return push(std::move(out), true, {a}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::layer_norm_rows(Var x, Var gain, Var shift,
                                               S eps) {
  const Mat<S>& X = val(x);
  require(val(gain).rows() == 1 && val(gain).cols() == X.cols(),
          "layer_norm gain shape");
  require(val(shift).rows() == 1 && val(shift).cols() == X.cols(),
          "layer_norm shift shape");
  const Eigen::Index C = X.cols();
  Mat<S> mu = X.rowwise().mean();
  Mat<S> xc = X - mu.replicate(1, C);
  Mat<S> var = xc.array().square().matrix().rowwise().mean();
  Mat<S> inv_std = (var.array() + eps).sqrt().inverse().matrix();
  Mat<S> xhat = xc.cwiseProduct(inv_std.replicate(1, C));
  Mat<S> out = xhat;
  out.array().rowwise() *= val(gain).row(0).array();
  out.array().rowwise() += val(shift).row(0).array();
  if (!any_needs({x, gain, shift}))
    return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [x, gain, shift, self, xhat = std::move(xhat),
               inv_std = std::move(inv_std)](Tape& t) {
    const Mat<S>& G = t.node(self).grad;
    const Eigen::Index C = G.cols();
    if (t.node(gain).needs_grad)
      t.g(gain).row(0) += G.cwiseProduct(xhat).colwise().sum();
    if (t.node(shift).needs_grad) t.g(shift).row(0) += G.colwise().sum();
    if (t.node(x).needs_grad) {
      Mat<S> gm = G;
      gm.array().rowwise() *= t.val(gain).row(0).array();
      Mat<S> m1 = gm.rowwise().mean();
      Mat<S> m2 = gm.cwiseProduct(xhat).rowwise().mean();
      Mat<S> dx = gm - m1.replicate(1, C) - xhat.cwiseProduct(m2.replicate(1, C));
      t.g(x) += dx.cwiseProduct(inv_std.replicate(1, C));
    }
  };
  return push(std::move(out), true, {x, gain, shift}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::softmax_rows(Var logits,
                                            const Mat<S>& additive_mask) {
  const Mat<S>& L = val(logits);
  require(additive_mask.rows() == L.rows() && additive_mask.cols() == L.cols(),
          "softmax mask shape");
  Mat<S> z = L + additive_mask;
  Mat<S> rowmax = z.rowwise().maxCoeff();
  Mat<S> e = (z - rowmax.replicate(1, z.cols())).array().exp().matrix();
  Mat<S> sums = e.rowwise().sum();
  Mat<S> out = e.cwiseQuotient(sums.replicate(1, z.cols()));
  if (!node(logits).needs_grad) return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [logits, self](Tape& t) {
    const Mat<S>& P = t.node(self).value;
    const Mat<S>& G = t.node(self).grad;
    Mat<S> inner = G.cwiseProduct(P).rowwise().sum();
    t.g(logits) += P.cwiseProduct(G - inner.replicate(1, G.cols()));
  };
  return push(std::move(out), true, {logits}, back);
}

template <class S>
typename Tape<S>::Var Tape<S>::softmax_rows(Var logits) {
  Mat<S> zero = Mat<S>::Zero(val(logits).rows(), val(logits).cols());
  return softmax_rows(logits, zero);
}

namespace {

// Visible key rows of one block, in scan order.
template <class S>
struct BlockScan {
  const typename Tape<S>::BlockSpec& spec;
  int size() const { return spec.len + (spec.extra >= 0 ? 1 : 0); }
  int row(int i) const { return i < spec.len ? spec.start + i : spec.extra; }
};

}  // namespace

template <class S>
typename Tape<S>::Var Tape<S>::block_attention(
    Var queries, Var keys, Var values, const std::vector<BlockSpec>& blocks,
    int heads, std::vector<Mat<S>>* probs_out) {
  const Mat<S>& Q = val(queries);
  const Mat<S>& K = val(keys);
  const Mat<S>& V = val(values);
  const Eigen::Index b_count = Q.rows();
  const Eigen::Index d = Q.cols();
  require(K.cols() == d && V.cols() == d && K.rows() == V.rows(),
          "block_attention shape mismatch");
  require(static_cast<Eigen::Index>(blocks.size()) == b_count,
          "block_attention: one block per query row");
  require(heads >= 1 && d % heads == 0, "block_attention heads");
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));

  // Flat per-(row, head) probability storage for the backward pass.
  std::vector<int> prob_offset(b_count + 1, 0);
  for (Eigen::Index b = 0; b < b_count; ++b) {
    BlockScan<S> scan{blocks[b]};
    require(scan.size() >= 1, "block_attention: empty visibility block");
    require(blocks[b].start >= 0 &&
                blocks[b].start + blocks[b].len <= K.rows() &&
                blocks[b].extra < static_cast<int>(K.rows()),
            "block_attention: block out of range");
    prob_offset[b + 1] = prob_offset[b] + scan.size();
  }
  std::vector<S> probs(static_cast<std::size_t>(prob_offset[b_count]) * heads);

  Mat<S> out = Mat<S>::Zero(b_count, d);
  std::vector<S> logits;
  for (Eigen::Index b = 0; b < b_count; ++b) {
    BlockScan<S> scan{blocks[b]};
    const int m = scan.size();
    logits.resize(m);
    for (int h = 0; h < heads; ++h) {
      const auto q = Q.row(b).segment(h * dh, dh);
      S max_logit = std::numeric_limits<S>::lowest();
      for (int i = 0; i < m; ++i) {
        logits[i] = scale * q.dot(K.row(scan.row(i)).segment(h * dh, dh));
        max_logit = std::max(max_logit, logits[i]);
      }
      S denom = S(0);
      for (int i = 0; i < m; ++i) {
        logits[i] = std::exp(logits[i] - max_logit);
        denom += logits[i];
      }
      S* p = probs.data() +
             (static_cast<std::size_t>(prob_offset[b]) * heads) +
             static_cast<std::size_t>(h) * m;
      auto out_h = out.row(b).segment(h * dh, dh);
      for (int i = 0; i < m; ++i) {
        p[i] = logits[i] / denom;
        out_h += p[i] * V.row(scan.row(i)).segment(h * dh, dh);
      }
    }
  }

  if (probs_out) {
    // Dense per-head matrices (zero where invisible) for analysis capture.
    for (int h = 0; h < heads; ++h) {
      Mat<S> dense = Mat<S>::Zero(b_count, K.rows());
      for (Eigen::Index b = 0; b < b_count; ++b) {
        BlockScan<S> scan{blocks[b]};
        const int m = scan.size();
        const S* p = probs.data() +
                     (static_cast<std::size_t>(prob_offset[b]) * heads) +
                     static_cast<std::size_t>(h) * m;
        for (int i = 0; i < m; ++i) dense(b, scan.row(i)) = p[i];
      }
      probs_out->push_back(std::move(dense));
    }
  }

  if (!any_needs({queries, keys, values}))
    return push(std::move(out), false, {}, nullptr);
  Var self{static_cast<int>(nodes_.size())};
  auto back = [queries, keys, values, blocks, heads, dh, scale, self,
               probs = std::move(probs),
               prob_offset = std::move(prob_offset)](Tape& t) {
    const Mat<S>& G = t.node(self).grad;
    const Mat<S>& Q = t.val(queries);
    const Mat<S>& K = t.val(keys);
    const Mat<S>& V = t.val(values);
    const bool need_q = t.node(queries).needs_grad;
    const bool need_k = t.node(keys).needs_grad;
    const bool need_v = t.node(values).needs_grad;
    Mat<S>* gq = need_q ? &t.g(queries) : nullptr;
    Mat<S>* gk = need_k ? &t.g(keys) : nullptr;
    Mat<S>* gv = need_v ? &t.g(values) : nullptr;

    std::vector<S> dp, ds;
    for (Eigen::Index b = 0; b < G.rows(); ++b) {
      BlockScan<S> scan{blocks[b]};
      const int m = scan.size();
      dp.resize(m);
      ds.resize(m);
      for (int h = 0; h < heads; ++h) {
        const S* p = probs.data() +
                     (static_cast<std::size_t>(prob_offset[b]) * heads) +
                     static_cast<std::size_t>(h) * m;
        const auto g_h = G.row(b).segment(h * dh, dh);
        S inner = S(0);
        for (int i = 0; i < m; ++i) {
          const int row = scan.row(i);
          dp[i] = g_h.dot(V.row(row).segment(h * dh, dh));
          if (need_v) gv->row(row).segment(h * dh, dh) += p[i] * g_h;
          inner += dp[i] * p[i];
        }
        for (int i = 0; i < m; ++i) ds[i] = p[i] * (dp[i] - inner) * scale;
        const auto q_h = Q.row(b).segment(h * dh, dh);
        for (int i = 0; i < m; ++i) {
          const int row = scan.row(i);
          if (need_q)
            gq->row(b).segment(h * dh, dh) +=
                ds[i] * K.row(row).segment(h * dh, dh);
          if (need_k) gk->row(row).segment(h * dh, dh) += ds[i] * q_h;
        }
      }
    }
  };
  return push(std::move(out), true, {queries, keys, values}, back);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace segrl

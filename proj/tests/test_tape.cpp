#include <doctest.h>

#include "segrl/tape.hpp"
#include "support/helpers.hpp"

using namespace segrl;
using segrl::testing::random_mat;
using segrl::testing::rel_error;

namespace {

// Finite differences of a scalar-valued tape program with respect to one
// input matrix, rebuilding the tape per probe.
template <class Build>
MatD fd_input(MatD input, Build&& build, double h = 1e-6) {
  MatD grad(input.rows(), input.cols());
  for (Eigen::Index r = 0; r < input.rows(); ++r) {
    for (Eigen::Index c = 0; c < input.cols(); ++c) {
      MatD up = input, down = input;
      up(r, c) += h;
      down(r, c) -= h;
      grad(r, c) = (build(up) - build(down)) / (2 * h);
    }
  }
  return grad;
}

template <class Build>
void check_op_gradient(const MatD& input, Build&& build, double tol = 1e-6) {
  Tape<double> tape;
  auto x = tape.leaf(input);
  auto loss = build(tape, x);
  tape.backward(loss);
  MatD analytic = tape.grad(x);
  MatD numeric = fd_input(input, [&](const MatD& probe) {
    Tape<double> t2;
    auto x2 = t2.leaf(probe);
    auto l2 = build(t2, x2);
    return t2.val(l2)(0, 0);
  });
  CHECK(rel_error(analytic, numeric) < tol);
}

}  // namespace

TEST_CASE("gradients of elementwise and reduction ops match finite differences") {
  Rng rng(11);
  MatD x = random_mat<double>(rng, 3, 4);

  check_op_gradient(x, [](auto& t, auto v) { return t.mean_all(t.tanh_op(v)); });
  check_op_gradient(x, [](auto& t, auto v) { return t.mean_all(t.exp_op(v)); });
  check_op_gradient(x, [](auto& t, auto v) {
    return t.mean_all(t.log_op(t.add_const(t.mul(v, v), 0.5)));
  });
  check_op_gradient(x, [](auto& t, auto v) {
    return t.sum_all(t.scale(t.add_const(v, 1.5), -0.3));
  });
  check_op_gradient(x, [](auto& t, auto v) {
    return t.mean_all(t.row_sum(t.mul(v, v)));
  });
  // Inputs are away from the relu/clamp kinks with overwhelming probability.
  check_op_gradient(x, [](auto& t, auto v) { return t.mean_all(t.relu(v)); });
  check_op_gradient(x,
                    [](auto& t, auto v) { return t.sum_all(t.clamp(v, -0.5, 0.5)); });
}

TEST_CASE("matmul family gradients") {
  Rng rng(12);
  MatD a = random_mat<double>(rng, 3, 5);
  MatD b = random_mat<double>(rng, 5, 2);
  MatD bt = random_mat<double>(rng, 2, 5);

  check_op_gradient(a, [&](auto& t, auto v) {
    return t.mean_all(t.matmul(v, t.constant(b)));
  });
  check_op_gradient(b, [&](auto& t, auto v) {
    return t.mean_all(t.matmul(t.constant(a), v));
  });
  check_op_gradient(a, [&](auto& t, auto v) {
    return t.mean_all(t.matmul_nt(v, t.constant(bt)));
  });
  check_op_gradient(bt, [&](auto& t, auto v) {
    return t.mean_all(t.matmul_nt(t.constant(a), v));
  });
}

TEST_CASE("structural op gradients (concat, slice, repeat, rowvec)") {
  Rng rng(13);
  MatD x = random_mat<double>(rng, 4, 6);
  MatD row = random_mat<double>(rng, 1, 6);

  check_op_gradient(x, [&](auto& t, auto v) {
    auto top = t.slice_rows(v, 0, 2);
    auto bottom = t.slice_rows(v, 2, 2);
    return t.mean_all(t.mul(t.concat_rows({bottom, top}),
                            t.constant(MatD::Ones(4, 6) * 0.5)));
  });
  check_op_gradient(x, [&](auto& t, auto v) {
    auto left = t.slice_cols(v, 0, 3);
    auto right = t.slice_cols(v, 3, 3);
    return t.sum_all(t.mul(t.concat_cols({right, left}), t.concat_cols({right, left})));
  });
  check_op_gradient(row, [&](auto& t, auto v) {
    return t.mean_all(t.mul(t.repeat_row(v, 5), t.repeat_row(v, 5)));
  });
  check_op_gradient(x, [&](auto& t, auto v) {
    return t.mean_all(t.add_rowvec(v, t.constant(row)));
  });
  check_op_gradient(row, [&](auto& t, auto v) {
    return t.mean_all(t.add_rowvec(t.constant(x), v));
  });
  check_op_gradient(x, [&](auto& t, auto v) {
    return t.mean_all(t.min_elt(v, t.constant(MatD::Zero(4, 6))));
  });
}

TEST_CASE("layer norm and softmax gradients") {
  Rng rng(14);
  MatD x = random_mat<double>(rng, 5, 8);
  MatD gain = random_mat<double>(rng, 1, 8, 0.3);
  MatD shift = random_mat<double>(rng, 1, 8, 0.3);

  check_op_gradient(x, [&](auto& t, auto v) {
    return t.mean_all(t.layer_norm_rows(v, t.constant(gain), t.constant(shift),
                                        1e-5));
  }, 1e-5);
  check_op_gradient(gain, [&](auto& t, auto v) {
    return t.mean_all(
        t.layer_norm_rows(t.constant(x), v, t.constant(shift), 1e-5));
  });
  check_op_gradient(shift, [&](auto& t, auto v) {
    return t.mean_all(
        t.layer_norm_rows(t.constant(x), t.constant(gain), v, 1e-5));
  });

  MatD weights = random_mat<double>(rng, 5, 8);
  check_op_gradient(x, [&](auto& t, auto v) {
    return t.mean_all(t.mul(t.softmax_rows(v), t.constant(weights)));
  });

  // Masked softmax: -inf entries get zero probability and zero gradient.
  MatD mask = MatD::Zero(5, 8);
  const double inf = std::numeric_limits<double>::infinity();
  mask(0, 0) = -inf;
  mask(3, 5) = -inf;
  Tape<double> tape;
  auto v = tape.leaf(x);
  auto probs = tape.softmax_rows(v, mask);
  CHECK(tape.val(probs)(0, 0) == 0.0);
  CHECK(tape.val(probs)(3, 5) == 0.0);
  for (int r = 0; r < 5; ++r)
    CHECK(tape.val(probs).row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
  check_op_gradient(x, [&](auto& t, auto w) {
    return t.mean_all(t.mul(t.softmax_rows(w, mask), t.constant(weights)));
  });
}

TEST_CASE("backward accumulates through shared subexpressions") {
  MatD x(1, 1);
  x << 0.7;
  Tape<double> tape;
  auto v = tape.leaf(x);
  auto y = tape.mul(v, v);    // x^2
  auto z = tape.add(y, v);    // x^2 + x
  auto loss = tape.sum_all(tape.mul(z, z));  // (x^2+x)^2
  tape.backward(loss);
  const double expected = 2.0 * (0.7 * 0.7 + 0.7) * (2.0 * 0.7 + 1.0);
  CHECK(tape.grad(v)(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("constants receive no gradient work") {
  MatD x(2, 2);
  x << 1, 2, 3, 4;
  Tape<double> tape;
  auto c = tape.constant(x);
  auto l = tape.mean_all(tape.mul(c, c));
  tape.backward(l);  // nothing to do but must not crash
  CHECK(tape.val(l)(0, 0) == doctest::Approx(7.5));
}

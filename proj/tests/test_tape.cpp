#include "doctest.h"

#include <cmath>

#include "grutv/errors.hpp"
#include "grutv/gradcheck.hpp"
#include "grutv/rng.hpp"
#include "grutv/tape.hpp"

using namespace grutv;

namespace {

Vec make_vec(std::initializer_list<double> xs) {
  Vec v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

Tensor random_vector(Rng& rng, Index n, double lo = -2.0, double hi = 2.0) {
  Vec v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return Tensor::vector(std::move(v));
}

Tensor random_matrix(Rng& rng, Index r, Index c) {
  Mat m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
  return Tensor::matrix(m);
}

}  // namespace

TEST_CASE("sigmoid at zero is one half") {
  Tape tape;
  ValueRef x = tape.constant(make_vec({0.0}));
  ValueRef y = tape.sigmoid(x);
  CHECK(tape.value(y)[0] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("concat joins vectors") {
  Tape tape;
  ValueRef a = tape.constant(make_vec({1.0, 2.0}));
  ValueRef b = tape.constant(make_vec({3.0}));
  ValueRef c = tape.concat({a, b});
  const Tensor& v = tape.value(c);
  REQUIRE(v.numel() == 3);
  CHECK(v[0] == 1.0);
  CHECK(v[1] == 2.0);
  CHECK(v[2] == 3.0);
}

TEST_CASE("tanh matches reference value") {
  // Scalar oracle: tanh(1) via the exponential definition.
  const double ref = (std::exp(1.0) - std::exp(-1.0)) / (std::exp(1.0) + std::exp(-1.0));
  Tape tape;
  ValueRef y = tape.tanh(tape.constant(make_vec({1.0})));
  CHECK(tape.value(y)[0] == doctest::Approx(0.7615941559).epsilon(1e-10));
  CHECK(tape.value(y)[0] == doctest::Approx(ref).epsilon(1e-15));
}

TEST_CASE("affine computes W^T x + b") {
  Tape tape;
  Mat w(2, 3);
  w << 1, 2, 3,
       4, 5, 6;
  ValueRef wr = tape.constant(Tensor::matrix(w));
  ValueRef xr = tape.constant(make_vec({1.0, -1.0}));
  ValueRef br = tape.constant(make_vec({0.5, 0.0, -0.5}));
  ValueRef y = tape.affine(wr, xr, br);
  CHECK(tape.value(y)[0] == doctest::Approx(-2.5));
  CHECK(tape.value(y)[1] == doctest::Approx(-3.0));
  CHECK(tape.value(y)[2] == doctest::Approx(-3.5));
}

TEST_CASE("shape mismatches name the primitive") {
  Tape tape;
  ValueRef a = tape.constant(make_vec({1.0, 2.0}));
  ValueRef b = tape.constant(make_vec({1.0}));
  CHECK_THROWS_WITH_AS(tape.add(a, b), doctest::Contains("add"), DimensionError);
  CHECK_THROWS_WITH_AS(tape.hadamard(a, b), doctest::Contains("hadamard"), DimensionError);
  Rng rng(1);
  ValueRef w = tape.constant(random_matrix(rng, 3, 2));
  CHECK_THROWS_WITH_AS(tape.affine(w, a, b), doctest::Contains("affine"), DimensionError);
}

TEST_CASE("backward of sigmoid at zero") {
  Tape tape;
  ValueRef x = tape.leaf(Tensor::vector(make_vec({0.0})));
  ValueRef y = tape.sigmoid(x);
  tape.backward(y, Tensor::scalar(1.0));
  CHECK(tape.grad(x)[0] == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("backward of tanh at one") {
  // 1 - tanh(1)^2
  Tape tape;
  ValueRef x = tape.leaf(Tensor::vector(make_vec({1.0})));
  ValueRef y = tape.tanh(x);
  tape.backward(y, Tensor::scalar(1.0));
  CHECK(tape.grad(x)[0] == doctest::Approx(0.41997434).epsilon(1e-7));
}

TEST_CASE("backward of add is linear in the seed") {
  Tape tape;
  ValueRef x = tape.leaf(Tensor::vector(make_vec({1.0, 2.0, 3.0})));
  ValueRef y = tape.leaf(Tensor::vector(make_vec({4.0, 5.0, 6.0})));
  ValueRef s = tape.add(x, y);
  tape.backward(s, Tensor::vector(make_vec({1.0, 1.0, 1.0})));
  for (Index i = 0; i < 3; ++i) {
    CHECK(tape.grad(x)[i] == 1.0);
    CHECK(tape.grad(y)[i] == 1.0);
  }
}

TEST_CASE("backward on empty tape is a usage error") {
  Tape tape;
  CHECK_THROWS_AS(tape.backward(ValueRef{0}, Tensor::scalar(1.0)), UsageError);
}

TEST_CASE("replay reproduces forward values bit-identically") {
  Rng rng(7);
  Tape tape;
  ValueRef w = tape.leaf(random_matrix(rng, 4, 3));
  ValueRef x = tape.leaf(random_vector(rng, 4));
  ValueRef b = tape.leaf(random_vector(rng, 3));
  ValueRef h = tape.tanh(tape.affine(w, x, b));
  ValueRef z = tape.sigmoid(tape.scale(0.7, h));
  ValueRef out = tape.hadamard(h, z);

  const Vec before = tape.value(out).data();
  tape.replay();
  const Vec after = tape.value(out).data();
  REQUIRE(before.size() == after.size());
  for (Index i = 0; i < before.size(); ++i) {
    CHECK(before[i] == after[i]);  // exact
  }
}

TEST_CASE("sigmoid and tanh ranges on wild inputs") {
  Rng rng(11);
  Tape tape;
  for (int trial = 0; trial < 50; ++trial) {
    tape.clear();
    ValueRef x = tape.constant(random_vector(rng, 17, -50.0, 50.0));
    const Tensor& s = tape.value(tape.sigmoid(x));
    const Tensor& t = tape.value(tape.tanh(x));
    for (Index i = 0; i < 17; ++i) {
      CHECK(s[i] > 0.0);
      CHECK(s[i] < 1.0);
      CHECK(t[i] > -1.0);
      CHECK(t[i] < 1.0);
    }
  }
}

TEST_CASE("grad_check on sigmoid at zero") {
  Tensor point = Tensor::vector(make_vec({0.0}));
  GradReport rep = grad_check(
      [](Tape& t, std::span<const ValueRef> leaves) { return t.sigmoid(leaves[0]); },
      std::span<const Tensor>(&point, 1), 1e-5, 1e-8);
  CHECK(rep.pass);
  CHECK(rep.max_rel_err <= 1e-8);
}

TEST_CASE("grad_check on a constant function") {
  Tensor point = Tensor::vector(make_vec({0.3, -1.2}));
  GradReport rep = grad_check(
      [](Tape& t, std::span<const ValueRef> leaves) {
        // output does not depend on the leaf
        (void)leaves;
        return t.constant(make_vec({2.0}));
      },
      std::span<const Tensor>(&point, 1), 1e-5, 1e-10);
  CHECK(rep.pass);
  CHECK(rep.max_abs_err == 0.0);
  CHECK(rep.max_rel_err == 0.0);
}

TEST_CASE("grad_check flags a scaled analytic gradient") {
  // Scaling the output inside f but dividing the comparison basis is not
  // possible through the public interface, so emulate a broken gradient by
  // checking that a function whose forward and backward disagree fails.
  // Here: f(x) = sigmoid(x), but the check runs against gradients of
  // 1.1*sigmoid(x) by scaling after backward.
  Tape tape;
  Tensor point = Tensor::vector(make_vec({0.0}));
  ValueRef x = tape.leaf(point);
  ValueRef y = tape.sigmoid(x);
  tape.backward(y, Tensor::scalar(1.0));
  const double analytic = 1.1 * tape.grad(x)[0];

  const double eps = 1e-5;
  Tensor& leaf = tape.leaf_value(x);
  leaf[0] = eps;
  tape.replay();
  const double fp = tape.value(y)[0];
  leaf[0] = -eps;
  tape.replay();
  const double fm = tape.value(y)[0];
  const double numeric = (fp - fm) / (2 * eps);
  const double rel = std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
  CHECK(rel > 1e-4);  // the checker's tolerance would reject this
}

TEST_CASE("grad_check rejects non-scalar outputs") {
  Tensor point = Tensor::vector(make_vec({0.0, 1.0}));
  CHECK_THROWS_AS(grad_check([](Tape& t, std::span<const ValueRef> leaves) {
                    return t.sigmoid(leaves[0]);
                  },
                             std::span<const Tensor>(&point, 1), 1e-5, 1e-6),
                  UsageError);
}

TEST_CASE("every primitive passes central-difference checks on random shapes") {
  Rng rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index p = 1 + static_cast<Index>(rng.below(5));
    const Index q = 1 + static_cast<Index>(rng.below(5));
    std::vector<Tensor> point;
    point.push_back(random_matrix(rng, p, q));     // W
    point.push_back(random_vector(rng, p));        // x
    point.push_back(random_vector(rng, q));        // b
    point.push_back(random_vector(rng, q));        // y (second operand)
    const double alpha = rng.uniform(-2.0, 2.0);

    // Exercises affine, concat, sigmoid, tanh, hadamard, add, scale,
    // exp_neg_relu and bce in one scalar function.
    Vec labels(2 * q);
    for (Index i = 0; i < 2 * q; ++i) labels[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    GradReport rep = grad_check(
        [alpha, labels](Tape& t, std::span<const ValueRef> leaves) {
          ValueRef a = t.affine(leaves[0], leaves[1], leaves[2]);
          ValueRef s = t.sigmoid(a);
          ValueRef u = t.tanh(t.hadamard(s, leaves[3]));
          ValueRef v = t.exp_neg_relu(t.add(u, t.scale(alpha, leaves[3])));
          ValueRef probs = t.sigmoid(t.concat({u, v}));
          return t.bce(probs, labels);
        },
        point, 1e-5, 1e-6);
    CHECK_MESSAGE(rep.pass, "trial ", trial, " max rel err ", rep.max_rel_err);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("forward_primitive dispatch mirrors the named calls") {
  Tape tape;
  ValueRef a = tape.constant(make_vec({0.5, -0.5}));
  ValueRef b = tape.constant(make_vec({1.0, 2.0}));
  std::vector<ValueRef> in{a, b};
  ValueRef s = tape.forward_primitive(Op::add, in);
  CHECK(tape.value(s)[0] == 1.5);
  std::vector<ValueRef> one{a};
  ValueRef sc = tape.forward_primitive(Op::scale, one, -2.0);
  CHECK(tape.value(sc)[0] == -1.0);
  CHECK_THROWS_AS(tape.forward_primitive(Op::bce, in), UsageError);
}

#include <cmath>
#include <random>

#include "doctest.h"
#include "imgmatch/gradcheck.hpp"
#include "imgmatch/tape.hpp"
#include "test_util.hpp"

using namespace imgmatch;
using namespace imgmatch::numcore;
using imgmatch::testing::random_tensor;

TEST_CASE("matmul") {
  const Tensor eye({2, 2}, {1, 0, 0, 1});
  const Tensor m({2, 2}, {3, 1, 2, 5});
  CHECK(matmul(eye, m) == m);

  const Tensor row({1, 2}, {1, 2});
  const Tensor col({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == doctest::Approx(11.0));
  // Same product with the right operand supplied transposed.
  CHECK(matmul(row, Tensor({1, 2}, {3, 4}), Transpose::kB).item() ==
        doctest::Approx(11.0));

  try {
    matmul(Tensor({3, 4}), Tensor({5, 2}));
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kShape);
    const std::string msg = e.what();
    CHECK(msg.find("[3x4]") != std::string::npos);
    CHECK(msg.find("[5x2]") != std::string::npos);
  }
}

TEST_CASE("row_softmax") {
  Tensor64 out = row_softmax(Tensor64({1, 2}, {0.0, 0.0}));
  CHECK(out[0] == doctest::Approx(0.5));
  CHECK(out[1] == doctest::Approx(0.5));

  out = row_softmax(Tensor64({1, 2}, {std::log(2.0), 0.0}));
  CHECK(out[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const std::vector<bool> first_only{true, false};
  out = row_softmax(Tensor64({1, 2}, {5.0, 9.0}), &first_only);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 0.0);

  const std::vector<bool> none{false, false};
  CHECK_THROWS_AS(row_softmax(Tensor64({1, 2}, {1.0, 2.0}), &none), Error);

  // Large logits stay finite.
  out = row_softmax(Tensor64({1, 3}, {1000.0, 999.0, -1000.0}));
  CHECK(out.all_finite());
}

TEST_CASE("row_softmax rows sum to one over enabled columns") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t p = 1 + rng() % 8;
    const std::size_t q = 1 + rng() % 12;
    Tensor64 x = random_tensor({p, q}, rng, -20.0, 20.0);
    std::vector<bool> mask(q);
    for (std::size_t j = 0; j < q; ++j) mask[j] = (rng() % 3) != 0;
    mask[rng() % q] = true;
    const Tensor64 y = row_softmax(x, &mask);
    for (std::size_t i = 0; i < p; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < q; ++j) {
        if (!mask[j]) CHECK(y.at(i, j) == 0.0);
        total += y.at(i, j);
      }
      CHECK(std::abs(total - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("elementwise") {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor id({2, 2}, {1, 0, 0, 1});
  CHECK(elementwise(ElementwiseKind::kMul, a, id) == Tensor({2, 2}, {1, 0, 0, 4}));
  CHECK(elementwise(ElementwiseKind::kScale, Tensor({3}, {1, 2, 3}), 0.5f) ==
        Tensor({3}, {0.5f, 1.0f, 1.5f}));
  CHECK(elementwise(ElementwiseKind::kNeg, a, 0.0f) ==
        Tensor({2, 2}, {-1, -2, -3, -4}));
  CHECK_THROWS_AS(elementwise(ElementwiseKind::kAdd, a, Tensor({4}, 1.0f)), Error);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), Error);
  CHECK_THROWS_AS(Tensor({2, 0}), Error);
  CHECK(Tensor({2, 3, 4}).size() == 24);
}

TEST_CASE("matmul is associative within 1e-4") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t p = 1 + rng() % 16, q = 1 + rng() % 16;
    const std::size_t r = 1 + rng() % 16, s = 1 + rng() % 16;
    const Tensor64 a = random_tensor({p, q}, rng, -10, 10);
    const Tensor64 b = random_tensor({q, r}, rng, -10, 10);
    const Tensor64 c = random_tensor({r, s}, rng, -10, 10);
    CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-4);
  }
}

TEST_CASE("backward on simple graphs") {
  std::mt19937_64 rng(3);
  Tape tape;
  Var x = tape.leaf(random_tensor({3, 4}, rng));
  tape.backward(tape.sum(x));
  for (double g : tape.grad(x).data()) CHECK(g == 1.0);

  Tape tape2;
  Var y = tape2.leaf(random_tensor({4, 5}, rng, -3, 3));
  tape2.backward(tape2.sum(tape2.row_softmax(y)));
  for (double g : tape2.grad(y).data()) CHECK(std::abs(g) <= 1e-6);

  CHECK_THROWS_AS(tape2.backward(y), Error);
}

TEST_CASE("repeated backward yields identical gradients") {
  std::mt19937_64 rng(9);
  Tape tape;
  Var a = tape.leaf(random_tensor({3, 4}, rng));
  Var b = tape.leaf(random_tensor({4, 2}, rng));
  Var loss = tape.sum(tape.row_softmax(tape.matmul(a, b)));
  loss = tape.add(loss, tape.mean(tape.mul(a, a)));
  tape.backward(loss);
  const Tensor64 ga = tape.grad(a);
  const Tensor64 gb = tape.grad(b);
  tape.backward(loss);
  CHECK(tape.grad(a) == ga);
  CHECK(tape.grad(b) == gb);
}

TEST_CASE("grad_check basics") {
  std::mt19937_64 rng(42);
  const Tensor64 x = random_tensor({4, 5}, rng);
  auto sum_sq = [](Tape& t, Var v) { return t.sum(t.mul(v, v)); };
  CHECK(grad_check(sum_sq, x, 1e-3).max_rel_error <= 1e-4);

  auto constant = [](Tape& t, Var) { return t.constant(Tensor64::scalar(3.0)); };
  CHECK(grad_check(constant, x, 1e-3).max_rel_error <= 1e-8);

  CHECK_THROWS_AS(grad_check(sum_sq, x, 0.0), Error);
  auto blowup = [](Tape& t, Var v) {
    return t.div(t.sum(v), t.constant(Tensor64::scalar(0.0)));
  };
  CHECK_THROWS_AS(grad_check(blowup, x, 1e-3), Error);
}

TEST_CASE("every tape op matches finite differences") {
  std::mt19937_64 rng(7);
  const Tensor64 other = random_tensor({4, 3}, rng);
  const Tensor64 keys = random_tensor({5, 3}, rng);
  const Tensor64 target = random_tensor({4, 5}, rng);
  const std::vector<bool> mask{true, false, true, true, false};

  // masked_sum o row_softmax o matmul
  auto composite = [&](Tape& t, Var x) {
    Var logits = t.matmul(t.mul(x, t.constant(other)), t.constant(keys),
                          Transpose::kB);
    Var a = t.row_softmax(t.scale(logits, 0.7), &mask);
    return t.masked_sum(a, {0, 2, 3}, {0, 3});
  };
  CHECK(grad_check(composite, random_tensor({4, 3}, rng), 1e-3).max_rel_error <= 1e-3);

  // Gradient w.r.t. the transposed operand and through div/mean/sub/neg.
  const Tensor64 q = random_tensor({4, 3}, rng);
  auto through_keys = [&](Tape& t, Var k) {
    Var a = t.row_softmax(t.matmul(t.constant(q), k, Transpose::kB));
    Var s = t.masked_sum(a, {1, 2}, {0, 1, 4});
    Var total = t.add(t.sum(a), 1e-8);
    Var ratio = t.div(s, total);
    Var reg = t.mean(t.neg(t.sub(k, t.scale(k, 0.5))));
    return t.add(ratio, reg);
  };
  CHECK(grad_check(through_keys, random_tensor({5, 3}, rng), 1e-3).max_rel_error <= 1e-3);

  // Plain matmul (right operand) and squared error.
  const Tensor64 left = random_tensor({4, 3}, rng);
  auto mse = [&](Tape& t, Var w) {
    return t.squared_error(t.matmul(t.constant(left), w), t.constant(target));
  };
  CHECK(grad_check(mse, random_tensor({3, 5}, rng), 1e-3).max_rel_error <= 1e-3);

  // Divisor gradient.
  auto divisor = [&](Tape& t, Var s) {
    return t.sum(t.div(t.constant(target), t.add(t.mul(s, s), 1.0)));
  };
  CHECK(grad_check(divisor, Tensor64::scalar(0.8), 1e-3).max_rel_error <= 1e-3);
}

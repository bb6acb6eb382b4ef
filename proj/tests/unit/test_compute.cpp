#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "support/op_cases.hpp"
#include "cpo/compute/grad_check.hpp"

using namespace cpo::compute;
using cpo::testing::random_tensor;

TEST_CASE("log_softmax of uniform logits is -ln n") {
  Tape t(false);
  Tensor y = t.log_softmax(Tensor::from({3}, {0, 0, 0}));
  for (double v : y.values()) CHECK(v == doctest::Approx(-std::log(3.0)).epsilon(1e-15));
}

TEST_CASE("sigmoid(0) is one half") {
  Tape t(false);
  CHECK(t.sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(t.log_sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(-std::log(2.0)));
}

TEST_CASE("log_sigmoid is stable at large magnitude") {
  Tape t(false);
  Tensor y = t.log_sigmoid(Tensor::from({2}, {-800.0, 800.0}));
  CHECK(y.at(0) == doctest::Approx(-800.0));
  CHECK(y.at(1) == 0.0);
}

TEST_CASE("matmul agrees with a naive triple loop") {
  std::mt19937_64 rng(3);
  Tensor a = random_tensor(rng, {2, 3});
  Tensor b = random_tensor(rng, {3, 2});
  Tape t(false);
  Tensor c = t.matmul(a, b);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 3; ++k) acc += a.at(i * 3 + k) * b.at(k * 2 + j);
      CHECK(c.at(i * 2 + j) == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("gradient of sum is one everywhere") {
  Tensor x = Tensor::from({2, 3}, {1, -2, 3, 0.5, 7, -1}, true);
  Tape t;
  t.backward(t.sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("gradient of sigmoid at zero is one quarter") {
  Tensor w = Tensor::scalar(0.0, true);
  Tape t;
  t.backward(t.sigmoid(w));
  CHECK(w.grad()[0] == 0.25);
}

TEST_CASE("every op matches central finite differences at 20 random points") {
  std::mt19937_64 rng(11);
  for (const auto& op : cpo::testing::op_cases()) {
    double worst = 0;
    for (int point = 0; point < 20; ++point) {
      auto [f, leaves] = op.make(rng);
      worst = std::max(worst, grad_check(f, leaves, 1e-5));
    }
    INFO(op.name);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("composed graph matches finite differences") {
  std::mt19937_64 rng(5);
  for (int point = 0; point < 20; ++point) {
    Tensor x = random_tensor(rng, {4, 3});
    Tensor w = random_tensor(rng, {3, 5});
    Tensor g = random_tensor(rng, {3}, 0.5, 1.5);
    Tensor b = random_tensor(rng, {3});
    const std::vector<int> targets{0, 4, 2, 1};
    auto f = [&](Tape& t) {
      Tensor h = t.gelu(t.layer_norm(x, g, b));
      Tensor logp = t.log_softmax(t.matmul(h, w));
      return t.log_sigmoid(t.scale(t.sum(t.gather_rows(logp, targets)), 0.3));
    };
    CHECK(grad_check(f, {x, w, g, b}) <= 1e-4);
  }
}

TEST_CASE("grad_check of a constant function is exactly zero") {
  Tensor x = Tensor::from({3}, {1, 2, 3});
  CHECK(grad_check([](Tape& t, const Tensor& p) { return t.scale(t.sum(p), 0.0); }, x) == 0.0);
}

TEST_CASE("log_softmax rows normalize") {
  std::mt19937_64 rng(9);
  Tape t(false);
  Tensor y = t.log_softmax(random_tensor(rng, {6, 17}, -30, 30));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 17; ++c) s += std::exp(y.at(r * 17 + c));
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("shape mismatches name the offending dimensions") {
  Tape t(false);
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    t.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(t.add(a, Tensor::zeros({3, 2})), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("non-finite inputs are rejected") {
  Tape t(false);
  Tensor bad = Tensor::from({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(t.sigmoid(bad), NumericError);
  Tensor inf = Tensor::from({2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(t.sum(inf), NumericError);
}

TEST_CASE("backward rejects non-scalar losses and a second pass") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape t;
  Tensor y = t.scale(x, 2.0);
  CHECK_THROWS_AS(t.backward(y), ShapeError);
  Tensor loss = t.sum(y);
  t.backward(loss);
  CHECK_THROWS_AS(t.backward(loss), std::logic_error);
  CHECK_THROWS_AS(t.sum(x), std::logic_error);
  t.clear();
  t.backward(t.sum(x));
  CHECK(x.grad()[0] == 3.0);  // accumulated over two passes: 2 + 1
}

TEST_CASE("backward visits ops in exact reverse order") {
  Tensor x = Tensor::from({2}, {0.3, -0.4}, true);
  Tape t;
  Tensor loss = t.sum(t.exp(t.scale(t.sigmoid(x), 2.0)));
  REQUIRE(t.size() == 4);
  t.backward(loss);
  CHECK(t.last_backward_order() == std::vector<std::size_t>{3, 2, 1, 0});
}

TEST_CASE("non-recording tapes skip gradient bookkeeping") {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tape t(false);
  Tensor y = t.sum(t.exp(x));
  CHECK_FALSE(y.requires_grad());
  CHECK(t.size() == 0);
}

TEST_CASE("identical inputs replay bit-identically") {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor a = random_tensor(rng, {7, 9});
    Tensor b = random_tensor(rng, {9, 4});
    Tape t(false);
    Tensor y = t.log_softmax(t.gelu(t.matmul(a, b)));
    return std::vector<double>(y.values().begin(), y.values().end());
  };
  CHECK(run() == run());
}

TEST_CASE("causal attention ignores future positions") {
  std::mt19937_64 rng(2);
  Tensor q = random_tensor(rng, {4, 4});
  Tensor k = random_tensor(rng, {4, 4});
  Tensor v = random_tensor(rng, {4, 4});
  Tape t(false);
  Tensor full = t.causal_attention(q, k, v, 2);
  Tensor prefix = t.causal_attention(t.slice_rows(q, 0, 2), t.slice_rows(k, 0, 2), t.slice_rows(v, 0, 2), 2);
  for (std::size_t i = 0; i < 8; ++i) CHECK(full.at(i) == doctest::Approx(prefix.at(i)).epsilon(1e-14));
}

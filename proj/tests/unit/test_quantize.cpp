#include <doctest.h>

#include <cmath>

#include "fsg/ops.hpp"
#include "fsg/quantize.hpp"

using namespace fsg;

TEST_CASE("preprocess maps symmetric weights to endpoints and midpoint") {
  const Preprocessed p = preprocess(Tensor::vector({-1, 0, 1}));
  CHECK(p.w_hat == Tensor::vector({0, 0.5, 1}));
  CHECK(p.scale == std::tanh(1.0));
}

TEST_CASE("all-zero weights hit the guard") {
  const Preprocessed p = preprocess(Tensor({2, 3}));
  CHECK(p.w_hat == Tensor({2, 3}, 0.5));
  CHECK(p.da_dw == Tensor({2, 3}));
  CHECK(quantize(p.w_hat) == Tensor({2, 3}, 1.0));
}

TEST_CASE("non-finite weights are rejected") {
  CHECK_THROWS_AS(preprocess(Tensor::vector({1, NAN})), EvaluationError);
}

TEST_CASE("dA/dW matches finite differences with the max held fixed") {
  Rng rng(1);
  const Tensor w = randn({3, 3}, rng);
  const Preprocessed p = preprocess(w);
  for (std::size_t j = 0; j < 9; ++j) {
    auto f = [&](const Tensor& x) { return preprocess(x, p.scale).w_hat[j]; };
    Tensor onehot({3, 3});
    onehot[j] = p.da_dw[j];
    CHECK(finite_diff_check(f, w, onehot, 1e-6, 1e-3) < 1e-6);
  }
}

TEST_CASE("quantize examples") {
  CHECK(quantize(Tensor::vector({0.2, 0.8, 1.0, 0.0})) == Tensor::vector({-1, 1, 1, -1}));
  const Tensor q2 = quantize(Tensor::vector({0, 1.0 / 3, 2.0 / 3, 1}), 2);
  CHECK(max_abs_diff(q2, Tensor::vector({-1, -1.0 / 3, 1.0 / 3, 1})) < 1e-15);
  CHECK(quantize(Tensor::vector({0.5}))[0] == 1.0);
  CHECK_THROWS_AS(quantize(Tensor::vector({1.1})), DomainError);
  CHECK_THROWS_AS(quantize(Tensor::vector({-0.01})), DomainError);
  CHECK_NOTHROW(quantize(Tensor::vector({1.0 + 1e-10})));
}

TEST_CASE("ste passes gradients through") {
  CHECK(ste_backward(Tensor({3})) == Tensor({3}));
  CHECK(ste_backward(Tensor::vector({1.5, -2})) == Tensor::vector({1.5, -2}));
}

TEST_CASE("ste times dA/dW is the gradient of the surrogate loss") {
  Rng rng(2);
  const Tensor w = randn({4}, rng), target = randn({4}, rng);
  const Preprocessed p = preprocess(w);
  // Surrogate: quantizer replaced by identity on 2 w_hat - 1, max frozen.
  auto loss = [&](const Tensor& x) {
    const Tensor a = preprocess(x, p.scale).w_hat;
    double s = 0;
    for (std::size_t i = 0; i < 4; ++i) s += 0.5 * std::pow(2 * a[i] - 1 - target[i], 2);
    return s;
  };
  Tensor g_out({4});
  for (std::size_t i = 0; i < 4; ++i) g_out[i] = 2 * (2 * p.w_hat[i] - 1 - target[i]);
  CHECK(finite_diff_check(loss, w, hadamard(ste_backward(g_out), p.da_dw), 1e-6, 1e-3) < 1e-5);
}

TEST_CASE("binarization yields signs and keeps order") {
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    const Tensor w = randn({5}, rng, std::pow(10.0, rng.uniform(-6, 2)));
    const Preprocessed p = preprocess(w);
    const Tensor b = quantize(p.w_hat);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK((b[i] == 1.0 || b[i] == -1.0));
      for (std::size_t j = 0; j < 5; ++j)
        if (w[i] <= w[j]) CHECK(p.w_hat[i] <= p.w_hat[j]);
    }
  }
}

TEST_CASE("re-binarizing signs preserves them") {
  const Tensor s = Tensor::vector({1, -1, -1, 1, 1});
  CHECK(quantize(preprocess(s).w_hat) == s);
}

TEST_CASE("QuantLayerState keeps derived tensors in sync") {
  QuantLayerState q(3, Tensor::vector({-0.5, 0.2, 0.9}));
  CHECK(q.layer_index == 3);
  CHECK(q.w_b == Tensor::vector({-1, 1, 1}));
  q.w[1] = -0.1;
  q.refresh();
  CHECK(q.w_b == Tensor::vector({-1, -1, 1}));
  CHECK(q.registered_grad.same_shape(q.w));
}

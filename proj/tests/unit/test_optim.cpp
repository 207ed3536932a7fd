#include <doctest.h>

#include <cmath>

#include "fsg/optim.hpp"

using namespace fsg;

TEST_CASE("momentum expansion hand example") {
  const std::vector<Tensor> ones(3, Tensor::vector({1.0}));
  CHECK(momentum_expand(0.5, 1.0, {ones[0]})[0] == -1.0);
  CHECK(momentum_expand(0.5, 1.0, {ones[0], ones[1]})[0] == -1.5);
  CHECK(momentum_expand(0.5, 1.0, ones)[0] == -1.75);
  CHECK(momentum_expand(0.0, 2.0, ones)[0] == -2.0);
  CHECK_THROWS_AS(momentum_expand(0.5, 1.0, {}), ContractError);
}

TEST_CASE("momentum expansion equals the recursive velocity") {
  Rng rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const double beta = rng.uniform(0.0, 0.99), alpha = rng.uniform(1e-3, 1.0);
    std::vector<Tensor> grads;
    Tensor x = randn({4}, rng), v;
    for (int t = 0; t < 15; ++t) {
      grads.push_back(randn({4}, rng));
      sgd_momentum_step(x, grads.back(), v, alpha, beta);
      CHECK(max_abs_diff(v, momentum_expand(beta, alpha, grads)) < 1e-12);
    }
  }
}

TEST_CASE("plain sgd") {
  Tensor x = Tensor::vector({1.0, -2.0});
  sgd_step(x, Tensor::vector({0.5, 1.0}), 0.1);
  CHECK(x[0] == doctest::Approx(0.95));
  CHECK(x[1] == doctest::Approx(-2.1));
  CHECK_THROWS_AS(sgd_step(x, Tensor({3}), 0.1), DimensionError);
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  Tensor x = Tensor::vector({0.0, 0.0, 0.0});
  AdamState st;
  adam_step(x, Tensor::vector({3.0, -0.01, 0.0}), st, 1e-3);
  CHECK(st.step == 1);
  CHECK(x[0] == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(x[1] == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(x[2] == 0.0);
}

TEST_CASE("adam matches a scalar reference over several steps") {
  Tensor x = Tensor::vector({0.3});
  AdamState st;
  double ref = 0.3, m = 0, v = 0;
  const double gs[] = {0.5, -0.2, 0.1, 0.7, -0.4};
  for (int t = 1; t <= 5; ++t) {
    const double g = gs[t - 1];
    adam_step(x, Tensor::vector({g}), st, 0.01);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    ref -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(x[0] == doctest::Approx(ref).epsilon(1e-14));
  }
}

TEST_CASE("optimizer slots keep independent state") {
  Optimizer opt(OptimizerKind::sgd, 0.1, 0.9);
  Tensor a = Tensor::vector({0.0}), b = Tensor::vector({0.0});
  opt.step(0, a, Tensor::vector({1.0}));
  opt.step(1, b, Tensor::vector({-1.0}));
  opt.step(0, a, Tensor::vector({1.0}));
  CHECK(a[0] == doctest::Approx(-0.1 - 0.19));
  CHECK(b[0] == doctest::Approx(0.1));
  CHECK(opt.state_tensors().size() == 2);
  CHECK_THROWS_AS(Optimizer(OptimizerKind::adam, 0.0), DomainError);
  CHECK(parse_optimizer_kind("adam") == OptimizerKind::adam);
  CHECK_THROWS_AS(parse_optimizer_kind("rmsprop"), std::invalid_argument);
}

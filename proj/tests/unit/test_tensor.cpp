#include <doctest.h>

#include <cmath>

#include "fsg/tensor.hpp"

using namespace fsg;

TEST_CASE("tensor shape and element count agree") {
  Tensor t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.dim(2) == 4);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  CHECK(Tensor().empty());
}

TEST_CASE("matrix literal is row major") {
  const Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(m.at(0, 2) == 3);
  CHECK(m.at(1, 0) == 4);
  CHECK(m.reshaped({3, 2}).at(1, 0) == 3);
  CHECK(m.as_column().shape() == Shape{6, 1});
  CHECK_THROWS_AS(m.reshaped({4, 2}), DimensionError);
}

TEST_CASE("elementwise helpers") {
  const Tensor a = Tensor::vector({1, -2, 3}), b = Tensor::vector({4, 5, -6});
  CHECK(add(a, b) == Tensor::vector({5, 3, -3}));
  CHECK(sub(a, b) == Tensor::vector({-3, -7, 9}));
  CHECK(hadamard(a, b) == Tensor::vector({4, -10, -18}));
  CHECK(dot(a, b) == -24);
  CHECK(max_abs(b) == 6);
  CHECK(sum(a) == 2);
  Tensor y = a;
  axpy(2.0, b, y);
  CHECK(y == Tensor::vector({9, 8, -9}));
  CHECK_THROWS_AS(add(a, Tensor::vector({1, 2})), DimensionError);
}

TEST_CASE("all_finite flags nan and inf") {
  Tensor t = Tensor::vector({1, 2});
  CHECK(t.all_finite());
  t[1] = std::nan("");
  CHECK_FALSE(t.all_finite());
  t[1] = INFINITY;
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("rng streams are reproducible") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);
  CHECK(randn({3, 3}, a) == randn({3, 3}, b));
}

TEST_CASE("mt19937_64 reference value") {
  // 10000th output of the standard 64-bit Mersenne Twister with its default seed.
  std::mt19937_64 e;
  e.discard(9999);
  CHECK(e() == 9981545732273789042ULL);
}

TEST_CASE("rng draws stay in range") {
  Rng r(1);
  double mean = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = r.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(r.below(7) < 7);
    mean += r.normal();
  }
  CHECK(std::abs(mean / 20000) < 0.05);
}

TEST_CASE("split streams differ from parent and each other") {
  const Rng root(9);
  Rng s1 = root.split(1), s2 = root.split(2), s1b = root.split(1);
  const auto v1 = s1.next_u64();
  CHECK(v1 == s1b.next_u64());
  CHECK(v1 != s2.next_u64());
}

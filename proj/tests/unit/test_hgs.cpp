#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fsg/hgs.hpp"

using namespace fsg;

TEST_CASE("fifo keeps the newest l gradients") {
  GradientHistoryBuffer buf(0, 3, 1);
  for (double g = 1; g <= 5; ++g) buf.push(Tensor::vector({g}));
  CHECK(buf.size() == 3);
  CHECK(buf.window().values() == std::vector<double>{3, 4, 5});
}

TEST_CASE("single push") {
  GradientHistoryBuffer buf(0, 6, 2);
  buf.push(Tensor::vector({1, 2}));
  CHECK(buf.window() == Tensor({2, 1}, std::vector<double>{1, 2}));
  buf.push(Tensor::vector({3, 4}));
  CHECK(buf.window().values() == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("conv gradients flatten in C_out, C_in, K, K order") {
  GradientHistoryBuffer buf(0, 2, 4);
  buf.push(Tensor({2, 2, 1, 1}, std::vector<double>{10, 11, 12, 13}));
  CHECK(buf.window().values() == std::vector<double>{10, 11, 12, 13});
}

TEST_CASE("full window ends with the newest gradient") {
  GradientHistoryBuffer buf(1, 6, 9);
  Rng rng(4);
  Tensor last;
  for (int t = 0; t < 8; ++t) {
    last = randn({1, 1, 3, 3}, rng);
    buf.push(last);
  }
  const Tensor w = buf.window();
  CHECK(w.numel() == 54);
  for (std::size_t j = 0; j < 9; ++j) CHECK(w[45 + j] == last[j]);
}

TEST_CASE("errors") {
  GradientHistoryBuffer buf(2, 3, 4);
  CHECK_THROWS_AS(buf.window(), EmptyHistoryError);
  CHECK_THROWS_AS(buf.push(Tensor({5})), DimensionError);
  CHECK_THROWS_AS(GradientHistoryBuffer(0, 0, 1), DomainError);
}

TEST_CASE("csv dump has one row per step") {
  GradientHistoryBuffer buf(0, 2, 2);
  buf.push(Tensor::vector({0.5, -1}));
  buf.push(Tensor::vector({2, 3}));
  const auto path = std::filesystem::temp_directory_path() / "fsg_hgs_dump.csv";
  buf.write_csv(path);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == "step,g0,g1\n0,0.5,-1\n1,2,3\n");
  std::filesystem::remove(path);
}

#include <doctest.h>

#include <filesystem>
#include <string>

#include "fsg/config.hpp"

using namespace fsg;

TEST_CASE("empty config gives the defaults") {
  const RunConfig c = parse_config("");
  CHECK(c == RunConfig{});
  CHECK(c.train.l == 6);
  CHECK(c.train.beta == 0.3);
  CHECK(c.train.alpha == 1.0);
  CHECK(c.data.kind == DataKind::spirals);
  CHECK(c.model == RunConfig::default_model());
  CHECK(parse_config("# only a comment\n") == RunConfig{});
}

TEST_CASE("invalid values name the field") {
  try {
    parse_config("train:\n  l: 0\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find("l") != std::string::npos);
    CHECK(what.find(">= 1") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("train:\n  l: -2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train:\n  lr: fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train:\n  method: adamw\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("data:\n  kind: spirals\n  classes: 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("convergence:\n  beta: 1.0\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("model:\n  layers: []\n"), ConfigError);
}

TEST_CASE("unknown keys report line and column") {
  try {
    parse_config("train:\n  epochs: 3\n  epoch: 4\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.epoch") != std::string::npos);
    CHECK(e.line() == 3);
    CHECK(e.column() == 3);
  }
  try {
    parse_config("train: [1, 2\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line() >= 1);
  }
}

TEST_CASE("canonical yaml round trips") {
  RunConfig c;
  c.train.method = Method::ste;
  c.train.beta = 0.1;
  c.train.lr = 1.0 / 3.0;
  c.train.optimizer = OptimizerKind::sgd;
  c.train.hyper.slow_kind = SlowKind::lstm;
  c.data.kind = DataKind::blobs;
  c.data.classes = 3;
  c.model.layers[0].binarize = true;
  c.convergence.bench.per_step_alpha = true;
  c.output_dir = "elsewhere";
  const std::string y = to_yaml(c);
  CHECK(parse_config(y) == c);
  CHECK(to_yaml(parse_config(y)) == y);
  CHECK(to_yaml(RunConfig{}) == to_yaml(parse_config("")));

  const auto path = std::filesystem::temp_directory_path() / "fsg_cfg_test.yaml";
  save_config(c, path);
  CHECK(load_config(path) == c);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_config(path), ConfigError);
}

TEST_CASE("layer lists") {
  const RunConfig c = parse_config(
      "model:\n  input: [1, 8, 8]\n  layers:\n"
      "    - {kind: conv2d, out: 4, kernel: 3, pad: 1}\n"
      "    - {kind: relu}\n    - {kind: flatten}\n    - {kind: dense, out: 2, binarize: true}\n");
  CHECK(c.model.input == Shape{1, 8, 8});
  REQUIRE(c.model.layers.size() == 4);
  CHECK(c.model.layers[0].pad == 1);
  CHECK(c.model.layers[3].binarize == std::optional<bool>(true));
  CHECK_FALSE(c.model.layers[0].binarize.has_value());
  CHECK_THROWS_AS(parse_config("model:\n  layers:\n    - {kind: dense, out: 0}\n"), ConfigError);
}

TEST_CASE("doubles print shortest round-trip form") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(3.0) == "3.0");
  CHECK(format_double(1e-8) == "1e-08");
  for (double v : {1.0 / 3.0, 2.5e-300, 123456.789}) CHECK(std::stod(format_double(v)) == v);
}

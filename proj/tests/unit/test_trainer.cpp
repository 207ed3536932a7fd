#include <doctest.h>

#include <cmath>
#include <limits>
#include <string>

#include "fsg/data.hpp"
#include "fsg/trainer.hpp"

using namespace fsg;

namespace {

ModelSpec small_mlp() {
  ModelSpec m;
  m.input = {2};
  LayerSpec d1, r, d2;
  d1.kind = LayerKind::dense;
  d1.out = 6;
  d1.binarize = true;
  r.kind = LayerKind::relu;
  d2.kind = LayerKind::dense;
  d2.out = 2;
  d2.binarize = true;
  m.layers = {d1, r, d2};
  return m;
}

Trainer make(Method method, std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.seed = seed;
  cfg.lr = 0.01;
  cfg.batch_size = 16;
  cfg.hyper.d = 4;
  cfg.hyper.fast_hidden = 8;
  Rng rng(seed);
  return Trainer(cfg, Model::build(small_mlp(), 2, rng));
}

Dataset blobs(std::uint64_t seed, std::size_t n = 32) {
  Rng rng(seed);
  return gen_synthetic(SyntheticKind::blobs, n, 0.3, rng);
}

}  // namespace

TEST_CASE("compose gradient examples") {
  const Tensor f = Tensor::vector({2.0, -1.0}), da = Tensor::vector({0.5, 0.25});
  CHECK(compose_gradient(f, nullptr, da, 1.0, 0.3) == Tensor::vector({1.0, -0.25}));
  const Tensor s = Tensor::vector({1.0, 1.0});
  CHECK(compose_gradient(f, &s, da, 2.0, 0.5) == Tensor::vector({1.5, -1.0}));
  const Tensor cancel = Tensor::vector({2.0, -0.5});
  CHECK(max_abs(compose_gradient(f, &cancel, da, 2.0, 1.0)) == 0.0);
  CHECK_THROWS_AS(compose_gradient(f, nullptr, Tensor({3}), 1.0, 0.3), DimensionError);
}

TEST_CASE("config validation names the field") {
  TrainConfig cfg;
  cfg.l = 0;
  try {
    cfg.validate();
    FAIL("expected a throw");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("l:") != std::string::npos);
  }
  cfg = TrainConfig{};
  cfg.beta = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.lr_decay_every = 2;
  cfg.lr_decay_factor = 0.5;
  CHECK(cfg.lr_at(0) == cfg.lr);
  CHECK(cfg.lr_at(3) == doctest::Approx(cfg.lr * 0.5));
  CHECK(cfg.lr_at(4) == doctest::Approx(cfg.lr * 0.25));
}

TEST_CASE("first fsg iteration makes no update") {
  Trainer t = make(Method::fsg);
  const auto before = t.quant();
  const std::uint64_t sum0 = t.state_checksum();
  const StepResult r = t.train_step(blobs(2));
  CHECK_FALSE(r.updated);
  CHECK(t.iteration() == 1);
  for (std::size_t s = 0; s < before.size(); ++s) CHECK(t.quant()[s].w == before[s].w);
  CHECK(t.buffers()[0].size() == 1);
  CHECK(t.state_checksum() != sum0);

  const StepResult r2 = t.train_step(blobs(3));
  CHECK(r2.updated);
  CHECK_FALSE(t.quant()[0].w == before[0].w);
}

TEST_CASE("ste updates from the first iteration") {
  Trainer t = make(Method::ste);
  const Tensor w0 = t.quant()[0].w;
  CHECK(t.train_step(blobs(2)).updated);
  CHECK_FALSE(t.quant()[0].w == w0);
}

TEST_CASE("evaluate does not mutate the trainer") {
  Trainer t = make(Method::fsg);
  t.train_step(blobs(2));
  t.train_step(blobs(3));
  const std::uint64_t sum = t.state_checksum();
  const EvalResult e1 = t.evaluate(blobs(4, 50));
  const EvalResult e2 = t.evaluate(blobs(4, 50));
  CHECK(t.state_checksum() == sum);
  CHECK(e1.loss == e2.loss);
  CHECK(e1.predictions == e2.predictions);
  CHECK(e1.predictions.size() == 100);
  CHECK(e1.accuracy >= 0.0);
  CHECK(e1.accuracy <= 1.0);
}

TEST_CASE("contract and divergence errors") {
  Trainer t = make(Method::fsg);
  const Dataset empty;
  CHECK_THROWS_AS(t.train_step(empty), ContractError);
  CHECK_THROWS_AS(t.evaluate(empty), ContractError);
  CHECK_THROWS_AS(t.lookahead_pass(blobs(2)), ContractError);

  Dataset bad = blobs(2);
  for (auto& v : bad.x.data()) v = std::numeric_limits<double>::max();
  Trainer s = make(Method::ste);
  try {
    s.train_step(bad);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() == 1);
  }
}

TEST_CASE("identical seeds give identical states") {
  Trainer a = make(Method::fsg, 5), b = make(Method::fsg, 5);
  const Dataset d = blobs(6, 40);
  a.train_epoch(d, 0);
  b.train_epoch(d, 0);
  CHECK(a.state_checksum() == b.state_checksum());
  Trainer c = make(Method::fsg, 6);
  c.train_epoch(d, 0);
  CHECK(c.state_checksum() != a.state_checksum());
}

TEST_CASE("ste learns separable blobs") {
  TrainConfig cfg;
  cfg.method = Method::ste;
  cfg.lr = 0.01;
  cfg.seed = 2;
  cfg.batch_size = 20;
  ModelSpec m = small_mlp();
  m.layers[0].out = 16;
  m.layers[0].binarize = false;
  m.layers[2].binarize = false;
  Rng rng(2);
  Trainer t(cfg, Model::build(m, 2, rng));
  const Dataset d = blobs(7, 100);
  const double first = t.evaluate(d).loss;
  for (std::size_t e = 0; e < 30; ++e) t.train_epoch(d, e);
  const EvalResult r = t.evaluate(d);
  CHECK(r.loss < first);
  CHECK(r.accuracy >= 0.95);
}

TEST_CASE("enum names round trip") {
  CHECK(parse_method(to_string(Method::ste)) == Method::ste);
  CHECK(parse_history_source(to_string(HistorySource::composed)) == HistorySource::composed);
  CHECK(parse_lookahead_step(to_string(LookaheadStep::unit)) == LookaheadStep::unit);
  CHECK_THROWS_AS(parse_method("sgd"), std::invalid_argument);
}

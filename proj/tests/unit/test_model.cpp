#include <doctest.h>

#include "fsg/model.hpp"
#include "fsg/ops.hpp"

using namespace fsg;

namespace {

LayerSpec layer(LayerKind kind, std::size_t out = 0) {
  LayerSpec s;
  s.kind = kind;
  s.out = out;
  return s;
}

ModelSpec mlp() {
  ModelSpec m;
  m.input = {3};
  m.layers = {layer(LayerKind::dense, 5), layer(LayerKind::relu), layer(LayerKind::dense, 4),
              layer(LayerKind::relu), layer(LayerKind::dense, 2)};
  return m;
}

std::vector<Tensor> own_weights(const Model& m) {
  std::vector<Tensor> w(m.n_quantized());
  for (const auto& l : m.layers())
    if (l.quantized) w[l.quant_slot] = l.w;
  return w;
}

}  // namespace

TEST_CASE("edge layers stay full precision by default") {
  Rng rng(1);
  const Model m = Model::build(mlp(), 2, rng);
  CHECK(m.n_quantized() == 1);
  CHECK_FALSE(m.layers()[0].quantized);
  CHECK(m.layers()[2].quantized);
  CHECK_FALSE(m.layers()[4].quantized);

  ModelSpec all = mlp();
  for (auto& l : all.layers)
    if (l.kind == LayerKind::dense) l.binarize = true;
  const Model mb = Model::build(all, 2, rng);
  CHECK(mb.n_quantized() == 3);
  CHECK(mb.layers()[4].quant_slot == 2);
}

TEST_CASE("build errors") {
  Rng rng(2);
  CHECK_THROWS_AS(Model::build(mlp(), 3, rng), DimensionError);
  ModelSpec bad = mlp();
  bad.layers[1].binarize = true;
  CHECK_THROWS_AS(Model::build(bad, 2, rng), ContractError);
  ModelSpec conv;
  conv.input = {1, 4, 4};
  conv.layers = {layer(LayerKind::dense, 2)};
  CHECK_THROWS_AS(Model::build(conv, 2, rng), DimensionError);
  CHECK_THROWS_AS(Model::build(ModelSpec{}, 2, rng), ContractError);
}

TEST_CASE("conv model shapes") {
  Rng rng(3);
  ModelSpec spec;
  spec.input = {1, 6, 6};
  LayerSpec c = layer(LayerKind::conv2d, 4);
  c.pad = 1;
  LayerSpec c2 = layer(LayerKind::conv2d, 2);
  c2.stride = 2;
  spec.layers = {c, layer(LayerKind::bias), layer(LayerKind::relu), c2, layer(LayerKind::flatten),
                 layer(LayerKind::dense, 3)};
  const Model m = Model::build(spec, 3, rng);
  CHECK(m.layers()[0].out_shape == Shape{4, 6, 6});
  CHECK(m.layers()[3].out_shape == Shape{2, 2, 2});
  CHECK(m.layers()[4].out_shape == Shape{8});
  ForwardCache cache;
  const Tensor logits = m.forward(randn({5, 1, 6, 6}, rng), own_weights(m), cache);
  CHECK(logits.shape() == Shape{5, 3});
  CHECK_THROWS_AS(m.forward(randn({5, 1, 5, 5}, rng), own_weights(m), cache), DimensionError);
  CHECK_THROWS_AS(m.forward(randn({5, 1, 6, 6}, rng), {}, cache), ContractError);
}

TEST_CASE("forward matches a hand chain") {
  Rng rng(4);
  const Model m = Model::build(mlp(), 2, rng);
  const Tensor x = randn({6, 3}, rng);
  ForwardCache cache;
  const Tensor out = m.forward(x, own_weights(m), cache);
  const auto& L = m.layers();
  Tensor h = relu_forward(dense_forward(x, L[0].w, L[0].b));
  h = relu_forward(dense_forward(h, L[2].w, L[2].b));
  CHECK(max_abs_diff(out, dense_forward(h, L[4].w, L[4].b)) < 1e-14);

  std::vector<Tensor> other = {scale(L[2].w, -1.0)};
  const Tensor out2 = m.forward(x, other, cache);
  h = relu_forward(dense_forward(x, L[0].w, L[0].b));
  h = relu_forward(dense_forward(h, other[0], L[2].b));
  CHECK(max_abs_diff(out2, dense_forward(h, L[4].w, L[4].b)) < 1e-14);
}

TEST_CASE("backward matches finite differences") {
  Rng rng(5);
  ModelSpec spec;
  spec.input = {1, 5, 5};
  LayerSpec c = layer(LayerKind::conv2d, 2);
  c.binarize = true;
  spec.layers = {c, layer(LayerKind::bias), layer(LayerKind::relu), layer(LayerKind::flatten),
                 layer(LayerKind::dense, 3)};
  Model m = Model::build(spec, 3, rng);
  for (auto& l : m.layers())
    if (l.has_bias()) l.b = randn(l.b.shape(), rng, 0.1);
  const Tensor x = randn({4, 1, 5, 5}, rng);
  const std::vector<int> y = {0, 2, 1, 2};
  std::vector<Tensor> qw = {randn({2, 1, 3, 3}, rng)};

  auto loss = [&](const Model& mm, const std::vector<Tensor>& q) {
    ForwardCache cc;
    return softmax_xent_forward(mm.forward(x, q, cc), y).loss;
  };
  ForwardCache cache;
  const auto fwd = softmax_xent_forward(m.forward(x, qw, cache), y);
  const ModelGrads g = m.backward(cache, softmax_xent_backward(fwd, y), qw);

  CHECK(finite_diff_check(
            [&](const Tensor& t) {
              std::vector<Tensor> q = {t};
              return loss(m, q);
            },
            qw[0], g.w[0], 1e-6, 1e-4) < 1e-5);
  for (std::size_t i : {std::size_t{1}, std::size_t{4}}) {
    Layer& l = m.layers()[i];
    const Tensor saved = l.b;
    CHECK(finite_diff_check(
              [&](const Tensor& t) {
                l.b = t;
                const double v = loss(m, qw);
                l.b = saved;
                return v;
              },
              saved, g.b[i], 1e-6, 1e-4) < 1e-5);
  }
  Layer& d = m.layers()[4];
  const Tensor saved = d.w;
  CHECK(finite_diff_check(
            [&](const Tensor& t) {
              d.w = t;
              const double v = loss(m, qw);
              d.w = saved;
              return v;
            },
            saved, g.w[4], 1e-6, 1e-4) < 1e-5);
  CHECK(g.w[2].empty());
}

TEST_CASE("layer kind names") {
  for (LayerKind k : {LayerKind::dense, LayerKind::conv2d, LayerKind::bias, LayerKind::relu, LayerKind::flatten})
    CHECK(parse_layer_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_layer_kind("pool"), std::invalid_argument);
}

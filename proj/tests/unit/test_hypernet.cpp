#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fsg/hgs.hpp"
#include "fsg/hypernet.hpp"
#include "fsg/ops.hpp"

using namespace fsg;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

FastNetParams random_fast(std::size_t h, Rng& rng, bool biases) {
  FastNetParams p = FastNetParams::init(h, rng);
  if (biases) {
    p.b1 = randn({h}, rng);
    p.b2 = randn({h}, rng);
    p.b3 = randn({1}, rng);
  }
  return p;
}

}  // namespace

// ----------------------------------------------------------------- fast-net

TEST_CASE("fast-net at the origin is zero") {
  Rng rng(1);
  const FastNetParams p = FastNetParams::init(100, rng);
  CHECK(max_abs(fast_forward(Tensor({3, 3}), Tensor({3, 3}), p)) == 0.0);
  CHECK(p.b1 == Tensor({100}));
}

TEST_CASE("fast-net is homogeneous and linear") {
  Rng rng(2);
  const FastNetParams p = FastNetParams::init(16, rng);
  const double y1 = fast_forward(Tensor::vector({1}), Tensor::vector({0}), p)[0];
  const double y2 = fast_forward(Tensor::vector({2}), Tensor::vector({0}), p)[0];
  CHECK(y2 == doctest::Approx(2 * y1).epsilon(1e-14));

  const Tensor u1 = randn({5}, rng), u2 = randn({5}, rng), v1 = randn({5}, rng), v2 = randn({5}, rng);
  const double a = 0.7, b = -1.3;
  const Tensor lhs = fast_forward(add(scale(u1, a), scale(v1, b)), add(scale(u2, a), scale(v2, b)), p);
  const Tensor rhs = add(scale(fast_forward(u1, u2, p), a), scale(fast_forward(v1, v2, p), b));
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
}

TEST_CASE("fast-net matches the matrix chain") {
  Rng rng(3);
  const FastNetParams p = random_fast(7, rng, true);
  const Tensor g = randn({2, 3}, rng), w = rand_uniform({2, 3}, rng, 0, 1);
  const Tensor out = fast_forward(g, w, p);
  CHECK(out.shape() == g.shape());
  for (std::size_t i = 0; i < 6; ++i) {
    Tensor a0 = Tensor::matrix(1, 2, {g[i], w[i]});
    Tensor a1 = add(matmul(a0, p.m1), p.b1.reshaped({1, 7}));
    Tensor a2 = add(matmul(a1, p.m2), p.b2.reshaped({1, 7}));
    const double y = matmul(a2, p.m3)[0] + p.b3[0];
    CHECK(out[i] == doctest::Approx(y).epsilon(1e-12));
  }
  CHECK_THROWS_AS(fast_forward(g, Tensor({3, 2}), p), DimensionError);
}

TEST_CASE("fast-net backward") {
  Rng rng(4);
  const FastNetParams p = random_fast(5, rng, true);
  const Tensor g = randn({6}, rng), w = rand_uniform({6}, rng, 0, 1);

  const FastNetGrads zero = fast_backward(g, w, p, Tensor({6}));
  zero.params.visit([](const char*, const Tensor& t) { CHECK(max_abs(t) == 0.0); });
  CHECK(max_abs(zero.g) == 0.0);

  FastNetParams nb = FastNetParams::init(5, rng);
  const double a = matmul(matmul(nb.m1, nb.m2), nb.m3)[0];
  const FastNetGrads s = fast_backward(Tensor::vector({1.5}), Tensor::vector({0.0}), nb, Tensor::vector({2.0}));
  CHECK(s.g[0] == doctest::Approx(2.0 * a).epsilon(1e-12));

  const Tensor r = randn({6}, rng);
  const FastNetGrads an = fast_backward(g, w, p, r);
  FastNetParams q = p;
  std::vector<const Tensor*> grads;
  an.params.visit([&](const char*, const Tensor& t) { grads.push_back(&t); });
  std::size_t k = 0;
  q.visit([&](const char*, Tensor& t) {
    const Tensor saved = t;
    auto f = [&](const Tensor& x) {
      t = x;
      const double v = dot(r, fast_forward(g, w, q));
      t = saved;
      return v;
    };
    CHECK(finite_diff_check(f, saved, *grads[k++], 1e-6, 1e-3) < 1e-5);
  });
  CHECK(finite_diff_check([&](const Tensor& x) { return dot(r, fast_forward(x, w, p)); }, g, an.g, 1e-6, 1e-3) < 1e-5);
  CHECK(finite_diff_check([&](const Tensor& x) { return dot(r, fast_forward(g, x, p)); }, w, an.w_hat, 1e-6, 1e-3) < 1e-5);
}

// ----------------------------------------------------------- ssm primitives

TEST_CASE("zoh discretization") {
  const ZohResult z = ssm_discretize(Tensor::vector({-1.0}), Tensor::matrix(1, 1, {1.0}), 0.1);
  CHECK(z.a_bar[0] == doctest::Approx(0.904837418035960).epsilon(1e-12));
  CHECK(z.b_bar[0] == doctest::Approx(0.0951625819640404).epsilon(1e-12));

  const ZohResult zero = ssm_discretize(Tensor::vector({0.0}), Tensor::matrix(1, 2, {3.0, -1.0}), 0.25);
  CHECK(zero.a_bar[0] == 1.0);
  CHECK(zero.b_bar == Tensor::matrix(1, 2, {0.75, -0.25}));

  const ZohResult small = ssm_discretize(Tensor::vector({-2.0}), Tensor::matrix(1, 1, {1.0}), 1e-5);
  CHECK(small.a_bar[0] == doctest::Approx(1.0 - 2e-5).epsilon(1e-9));
  CHECK(small.b_bar[0] == doctest::Approx(1e-5).epsilon(1e-4));

  CHECK_THROWS_AS(ssm_discretize(Tensor::vector({-1.0}), Tensor::matrix(1, 1, {1.0}), 0.0), DomainError);
}

TEST_CASE("scan and conv hand examples") {
  const Tensor a = Tensor::matrix(1, 1, {0.5}), b = Tensor::matrix(1, 1, {1}), c = Tensor::matrix(1, 1, {1});
  CHECK(ssm_scan(a, b, c, Tensor::vector({1, 0, 0})) == Tensor::vector({1, 0.5, 0.25}));
  CHECK(ssm_kernel(a, b, c, 3) == Tensor::vector({1, 0.5, 0.25}));
  CHECK(max_abs(ssm_scan(a, b, c, Tensor({5}))) == 0.0);
  const Tensor c3 = Tensor::matrix(1, 1, {3}), b2 = Tensor::matrix(1, 1, {2});
  CHECK(ssm_conv(a, b2, c3, Tensor::vector({1.5}))[0] == 9.0);
}

TEST_CASE("scan equals conv for random time-invariant systems") {
  Rng rng(5);
  for (int k = 0; k < 50; ++k) {
    const std::size_t n = 1 + rng.below(4), len = 1 + rng.below(64);
    const Tensor a = rand_uniform({1, n}, rng, -0.99, 0.99), b = randn({1, n}, rng), c = randn({1, n}, rng);
    const Tensor x = randn({len}, rng);
    CHECK(max_abs_diff(ssm_scan(a, b, c, x), ssm_conv(a, b, c, x)) < 1e-10);
  }
}

TEST_CASE("scan and conv are causal") {
  Rng rng(6);
  const Tensor a = rand_uniform({1, 3}, rng, -0.9, 0.9), b = randn({1, 3}, rng), c = randn({1, 3}, rng);
  Tensor x = randn({20}, rng);
  const Tensor y = ssm_scan(a, b, c, x), yc = ssm_conv(a, b, c, x);
  for (std::size_t t = 11; t < 20; ++t) x[t] = 0.0;
  const Tensor y2 = ssm_scan(a, b, c, x), yc2 = ssm_conv(a, b, c, x);
  for (std::size_t t = 0; t <= 10; ++t) {
    CHECK(y[t] == y2[t]);
    CHECK(yc[t] == yc2[t]);
  }
}

TEST_CASE("scan errors") {
  const Tensor a = Tensor({2, 1}, 0.5), b = Tensor({1, 1}, 1.0), c = Tensor({1, 1}, 1.0);
  CHECK_THROWS_AS(ssm_scan(a, b, c, Tensor({3})), DimensionError);
  CHECK_THROWS_AS(ssm_conv(a, b, c, Tensor({2})), ContractError);
}

TEST_CASE("selective parameters") {
  Rng rng(7);
  SsmParams p = SsmParams::zeros(2, 2, 3);
  const SelectiveParams z = selective_params(Tensor({2, 4}), p);
  CHECK(max_abs(z.b) == 0.0);
  CHECK(max_abs(z.c) == 0.0);
  CHECK(z.delta[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  p = SsmParams::init(2, 2, 3, rng);
  p.bias_b = Tensor({3});
  p.bias_c = Tensor({3});
  const Tensor tok = randn({1, 4}, rng);
  const SelectiveParams s1 = selective_params(tok, p), s2 = selective_params(scale(tok, 3.0), p);
  CHECK(max_abs_diff(scale(s1.b, 3.0), s2.b) < 1e-14);
  CHECK(max_abs_diff(scale(s1.c, 3.0), s2.c) < 1e-14);
  for (std::size_t n = 0; n < 3; ++n) {
    double b = 0;
    for (std::size_t k = 0; k < 4; ++k) b += p.s_b.at(n, k) * tok[k];
    CHECK(s1.b[n] == doctest::Approx(b).epsilon(1e-14));
  }
  CHECK(s1.delta[0] > 0.0);
}

// ----------------------------------------------------------------- slow-net

namespace {

HyperNetBundle bundle_for(SlowKind kind, std::size_t layers, std::uint64_t seed, std::size_t d = 2) {
  HyperNetConfig hc;
  hc.slow_kind = kind;
  hc.d = d;
  hc.state_dim = 2;
  hc.expand = 2;
  hc.fast_hidden = 4;
  Rng rng(seed);
  return HyperNetBundle::create(hc, layers, rng);
}

/// Token build, block, slice and head written out with scalar loops.
std::vector<double> ssm_oracle(const HyperNetBundle& bb, std::size_t layer, const std::vector<double>& hist,
                               std::size_t xi) {
  const SsmParams& p = bb.ssm;
  const std::size_t d = bb.d(), D = p.d_inner(), N = p.state(), L = hist.size() + 1;
  std::vector<std::vector<double>> u(L, std::vector<double>(d));
  for (std::size_t k = 0; k < d; ++k) u[0][k] = bb.lre.at(layer, k);
  for (std::size_t j = 0; j < hist.size(); ++j)
    for (std::size_t k = 0; k < d; ++k) u[j + 1][k] = hist[j] * bb.token_proj[k];

  std::vector<std::vector<double>> h(D, std::vector<double>(N, 0.0));
  std::vector<double> out;
  for (std::size_t s = 0; s < L; ++s) {
    std::vector<double> x(D), z(D), B(N), C(N);
    for (std::size_t i = 0; i < D; ++i) {
      x[i] = p.b_in[i];
      z[i] = p.b_z[i];
      for (std::size_t k = 0; k < d; ++k) {
        x[i] += p.w_in.at(i, k) * u[s][k];
        z[i] += p.w_z.at(i, k) * u[s][k];
      }
    }
    double dt = p.bias_dt[0];
    for (std::size_t i = 0; i < D; ++i) dt += p.s_dt.at(0, i) * x[i];
    const double delta = std::log(1.0 + std::exp(dt));
    for (std::size_t n = 0; n < N; ++n) {
      B[n] = p.bias_b[n];
      C[n] = p.bias_c[n];
      for (std::size_t i = 0; i < D; ++i) {
        B[n] += p.s_b.at(n, i) * x[i];
        C[n] += p.s_c.at(n, i) * x[i];
      }
    }
    std::vector<double> gated(D);
    for (std::size_t i = 0; i < D; ++i) {
      double y = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const double a = -std::exp(p.a_log.at(i, n));
        h[i][n] = std::exp(delta * a) * h[i][n] + (std::exp(delta * a) - 1.0) / a * B[n] * x[i];
        y += C[n] * h[i][n];
      }
      gated[i] = y * z[i] * sig(z[i]);
    }
    if (s + xi >= L) {
      double g = 0;
      for (std::size_t k = 0; k < d; ++k) {
        double o = p.b_out[k] + u[s][k];
        for (std::size_t i = 0; i < D; ++i) o += p.w_out.at(k, i) * gated[i];
        g += o * bb.head_proj[k];
      }
      out.push_back(g);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("slow-net ssm matches a hand-unrolled pipeline") {
  const HyperNetBundle bb = bundle_for(SlowKind::ssm, 2, 11);
  const Tensor hist = Tensor({2, 1}, std::vector<double>{0.3, -0.8});
  const SlowOutput out = slow_forward(1, hist, {2}, bb);
  const auto want = ssm_oracle(bb, 1, hist.values(), 2);
  REQUIRE(out.grad.numel() == 2);
  for (std::size_t j = 0; j < 2; ++j) CHECK(out.grad[j] == doctest::Approx(want[j]).epsilon(1e-12));

  const Tensor hist3 = Tensor({6, 1}, std::vector<double>{0.1, 0.2, -0.3, 0.4, 0.5, -0.6});
  const auto want3 = ssm_oracle(bb, 0, hist3.values(), 2);
  const SlowOutput out3 = slow_forward(0, hist3, {2}, bb);
  for (std::size_t j = 0; j < 2; ++j) CHECK(out3.grad[j] == doctest::Approx(want3[j]).epsilon(1e-12));
}

TEST_CASE("slow-net output shape follows the requesting layer") {
  const HyperNetBundle bb = bundle_for(SlowKind::ssm, 3, 12, 16);
  GradientHistoryBuffer buf(0, 6, 4 * 3 * 3 * 3);
  Rng rng(1);
  for (int t = 0; t < 6; ++t) buf.push(randn({4, 3, 3, 3}, rng, 1e-2));
  const SlowOutput out = slow_forward(2, buf.window(), {4, 3, 3, 3}, bb);
  CHECK(out.cache.length == 649);
  CHECK(out.grad.shape() == Shape{4, 3, 3, 3});
  CHECK(out.grad.all_finite());
}

TEST_CASE("slow-net at the origin is zero") {
  for (SlowKind kind : {SlowKind::ssm, SlowKind::lstm}) {
    HyperNetBundle bb = bundle_for(kind, 2, 13);
    bb.lre.fill(0.0);
    const SlowOutput out = slow_forward(0, Tensor({4, 1}), {2, 2}, bb);
    CHECK(max_abs(out.grad) == 0.0);
    if (kind == SlowKind::lstm) CHECK(max_abs(out.cache.cell) == 0.0);
  }
}

TEST_CASE("slow-net errors") {
  const HyperNetBundle bb = bundle_for(SlowKind::ssm, 2, 14);
  CHECK_THROWS_AS(slow_forward(0, Tensor(), {2}, bb), EmptyHistoryError);
  CHECK_THROWS_AS(slow_forward(2, Tensor({2, 1}), {2}, bb), std::out_of_range);
  CHECK_THROWS_AS(slow_forward(0, Tensor({3, 1}), {2}, bb), DimensionError);
}

TEST_CASE("lstm slow-net matches hand gate equations") {
  HyperNetBundle bb = bundle_for(SlowKind::lstm, 1, 15, 2);
  const double hv = 0.7;
  const SlowOutput out = slow_forward(0, Tensor({1, 1}, std::vector<double>{hv}), {1}, bb);
  const LstmParams& p = bb.lstm;
  std::vector<double> h(2, 0.0), c(2, 0.0);
  for (int s = 0; s < 2; ++s) {
    std::vector<double> u(2);
    for (std::size_t k = 0; k < 2; ++k) u[k] = s == 0 ? bb.lre.at(0, k) : hv * bb.token_proj[k];
    std::vector<double> z(8);
    for (std::size_t r = 0; r < 8; ++r) {
      z[r] = p.b[r];
      for (std::size_t k = 0; k < 2; ++k) z[r] += p.w_x.at(r, k) * u[k] + p.w_h.at(r, k) * h[k];
    }
    for (std::size_t k = 0; k < 2; ++k) {
      c[k] = sig(z[2 + k]) * c[k] + sig(z[k]) * std::tanh(z[4 + k]);
      h[k] = sig(z[6 + k]) * std::tanh(c[k]);
    }
  }
  const double want = h[0] * bb.head_proj[0] + h[1] * bb.head_proj[1];
  CHECK(out.grad[0] == doctest::Approx(want).epsilon(1e-13));
}

TEST_CASE("slow-net backward: zero cotangent and embedding rows") {
  for (SlowKind kind : {SlowKind::ssm, SlowKind::lstm}) {
    const HyperNetBundle bb = bundle_for(kind, 3, 16);
    Rng rng(2);
    const Tensor hist = randn({8, 1}, rng);
    const SlowOutput out = slow_forward(1, hist, {2, 2}, bb);

    HyperNetBundle g0 = bb.zeros_like();
    slow_backward(out.cache, bb, Tensor({2, 2}), g0);
    g0.visit([](const char*, const Tensor& t) { CHECK(max_abs(t) == 0.0); });

    HyperNetBundle g = bb.zeros_like();
    slow_backward(out.cache, bb, randn({2, 2}, rng), g);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t k = 0; k < bb.d(); ++k) {
        if (r == 1) continue;
        CHECK(g.lre.at(r, k) == 0.0);
      }
    CHECK(std::abs(g.lre.at(1, 0)) + std::abs(g.lre.at(1, 1)) > 0.0);
  }
}

TEST_CASE("slow-net backward matches finite differences") {
  for (SlowKind kind : {SlowKind::ssm, SlowKind::lstm}) {
    HyperNetBundle bb = bundle_for(kind, 2, 17, 3);
    Rng rng(3);
    bb.visit([&](const char*, Tensor& t) {
      for (auto& v : t.data()) v += 0.2 * rng.normal();
    });
    if (kind == SlowKind::ssm) bb.ssm.bias_dt[0] = 0.3;
    const Tensor hist = randn({6, 1}, rng), r = randn({3}, rng);
    const SlowOutput out = slow_forward(0, hist, {3}, bb);
    HyperNetBundle g = bb.zeros_like();
    slow_backward(out.cache, bb, r, g);
    std::vector<const Tensor*> an;
    g.visit([&](const char*, const Tensor& t) { an.push_back(&t); });
    std::size_t k = 0;
    bb.visit([&](const char* name, Tensor& t) {
      const Tensor saved = t;
      const Tensor fd = finite_diff_gradient(
          [&](const Tensor& x) {
            t = x;
            const double v = dot(r, slow_forward(0, hist, {3}, bb).grad);
            t = saved;
            return v;
          },
          saved, 1e-5);
      const double scale = std::max({max_abs(fd), max_abs(*an[k]), 1e-8});
      INFO(name);
      CHECK(max_abs_diff(fd, *an[k]) / scale < 1e-4);
      ++k;
    });
  }
}

// -------------------------------------------------------------- checkpoints

TEST_CASE("parameter archive round trip is bit exact") {
  const HyperNetBundle bb = bundle_for(SlowKind::ssm, 2, 18);
  ParamArchive a;
  store_bundle(bb, a);
  const auto path = std::filesystem::temp_directory_path() / "fsg_params.bin";
  a.save(path.string());
  const ParamArchive b = ParamArchive::load(path.string());
  CHECK(a == b);
  HyperNetBundle restored = bb.zeros_like();
  restore_bundle(restored, b);
  std::vector<const Tensor*> lhs;
  bb.visit([&](const char*, const Tensor& t) { lhs.push_back(&t); });
  std::size_t k = 0;
  restored.visit([&](const char*, const Tensor& t) { CHECK(t == *lhs[k++]); });

  std::ifstream in(path, std::ios::binary);
  char magic[8];
  in.read(magic, 8);
  CHECK(std::string(magic, 8) == "FSGPARAM");
  in.close();
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(0);
    f.write("XSGPARAM", 8);
  }
  CHECK_THROWS(ParamArchive::load(path.string()));
  std::filesystem::remove(path);
}

TEST_CASE("kind names") {
  CHECK(parse_slow_kind("selective-ssm") == SlowKind::ssm);
  CHECK(parse_slow_kind("lstm") == SlowKind::lstm);
  CHECK(parse_fast_kind("identity") == FastKind::identity);
  CHECK_THROWS_AS(parse_fast_kind("cnn"), std::invalid_argument);
}

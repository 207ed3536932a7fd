#include "fsg/hypernet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fsg/hgs.hpp"
#include "fsg/ops.hpp"

namespace fsg {

std::string_view to_string(FastKind kind) {
  switch (kind) {
    case FastKind::mlp: return "mlp";
    case FastKind::identity: return "identity";
    case FastKind::off: return "off";
  }
  return "?";
}

std::string_view to_string(SlowKind kind) {
  switch (kind) {
    case SlowKind::ssm: return "ssm";
    case SlowKind::lstm: return "lstm";
    case SlowKind::off: return "off";
  }
  return "?";
}

FastKind parse_fast_kind(std::string_view text) {
  if (text == "mlp") return FastKind::mlp;
  if (text == "identity") return FastKind::identity;
  if (text == "off") return FastKind::off;
  throw std::invalid_argument("unknown fast_kind '" + std::string(text) +
                              "' (expected mlp, identity or off)");
}

SlowKind parse_slow_kind(std::string_view text) {
  if (text == "ssm" || text == "selective-ssm" || text == "mamba") return SlowKind::ssm;
  if (text == "lstm") return SlowKind::lstm;
  if (text == "off") return SlowKind::off;
  throw std::invalid_argument("unknown slow_kind '" + std::string(text) +
                              "' (expected ssm, lstm or off)");
}

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

Tensor row_broadcast_add(Tensor m, const Tensor& bias) {
  const std::size_t cols = m.dim(1);
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < cols; ++j) m.at(i, j) += bias[j];
  return m;
}

void add_column_sums(const Tensor& m, Tensor& acc) {
  const std::size_t cols = m.dim(1);
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < cols; ++j) acc[j] += m.at(i, j);
}

}  // namespace

// ----------------------------------------------------------------- fast-net

FastNetParams FastNetParams::init(std::size_t hidden, Rng& rng) {
  FastNetParams p;
  p.m1 = orthogonal_init(2, hidden, rng);
  p.m2 = orthogonal_init(hidden, hidden, rng);
  p.m3 = orthogonal_init(hidden, 1, rng);
  p.b1 = Tensor({hidden});
  p.b2 = Tensor({hidden});
  p.b3 = Tensor({1});
  return p;
}

FastNetParams FastNetParams::zeros(std::size_t hidden) {
  FastNetParams p;
  p.m1 = Tensor({2, hidden});
  p.m2 = Tensor({hidden, hidden});
  p.m3 = Tensor({hidden, 1});
  p.b1 = Tensor({hidden});
  p.b2 = Tensor({hidden});
  p.b3 = Tensor({1});
  return p;
}

// The stack has no activations, so both passes run on collapsed products:
// out = [g, w_hat] (M1 M2 M3) + ((b1 M2 + b2) M3 + b3).

namespace {

struct Collapsed {
  Tensor p;   // M1 M2, 2 x H
  Tensor u;   // M2 M3, H x 1
  double v0, v1;  // M1 M2 M3
  Tensor c2;  // b1 M2 + b2, H
  double c3;
};

Collapsed collapse(const FastNetParams& p) {
  Collapsed c;
  c.p = matmul(p.m1, p.m2);
  c.u = matmul(p.m2, p.m3);
  const Tensor v = matmul(c.p, p.m3);
  c.v0 = v[0];
  c.v1 = v[1];
  const std::size_t h = p.hidden();
  c.c2 = matmul(p.b1.reshaped({1, h}), p.m2).reshaped({h});
  add_inplace(c.c2, p.b2);
  double acc = p.b3[0];
  for (std::size_t k = 0; k < h; ++k) acc += c.c2[k] * p.m3[k];
  c.c3 = acc;
  return c;
}

}  // namespace

Tensor fast_forward(const Tensor& g, const Tensor& w_hat, const FastNetParams& p) {
  require_same_shape(g, w_hat, "fast-net input");
  const Collapsed c = collapse(p);
  Tensor out = zeros_like(g);
  for (std::size_t i = 0; i < g.numel(); ++i) out[i] = g[i] * c.v0 + w_hat[i] * c.v1 + c.c3;
  return out;
}

FastNetGrads fast_backward(const Tensor& g, const Tensor& w_hat, const FastNetParams& p,
                           const Tensor& cotangent) {
  require_same_shape(g, w_hat, "fast-net input");
  require_same_shape(g, cotangent, "fast_backward cotangent");
  const Collapsed c = collapse(p);
  const std::size_t h = p.hidden();

  // Sufficient statistics of the batch of pairs.
  double s = 0.0, sg = 0.0, sw = 0.0;
  for (std::size_t i = 0; i < g.numel(); ++i) {
    s += cotangent[i];
    sg += cotangent[i] * g[i];
    sw += cotangent[i] * w_hat[i];
  }

  FastNetGrads out{FastNetParams::zeros(h), zeros_like(g), zeros_like(w_hat)};
  FastNetParams& d = out.params;
  for (std::size_t k = 0; k < h; ++k) {
    d.m3[k] = sg * c.p.at(0, k) + sw * c.p.at(1, k) + s * c.c2[k];
    d.b2[k] = s * p.m3[k];
    d.m1.at(0, k) = sg * c.u[k];
    d.m1.at(1, k) = sw * c.u[k];
    d.b1[k] = s * c.u[k];
  }
  d.b3[0] = s;
  // dM2 = (sum_j d_j a1_j)^T M3^T with a1_j = [g_j, w_j] M1 + b1.
  std::vector<double> s1(h);
  for (std::size_t k = 0; k < h; ++k) s1[k] = sg * p.m1.at(0, k) + sw * p.m1.at(1, k) + s * p.b1[k];
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t k = 0; k < h; ++k) d.m2.at(r, k) = s1[r] * p.m3[k];
  for (std::size_t i = 0; i < g.numel(); ++i) {
    out.g[i] = cotangent[i] * c.v0;
    out.w_hat[i] = cotangent[i] * c.v1;
  }
  return out;
}

// ------------------------------------------------------------ SSM primitives

namespace {

constexpr double kZohGuard = 1e-8;
constexpr double kSeriesCutoff = 1e-3;

/// (exp(delta a) - 1) / a, the per-channel ZOH input gain.
double zoh_gain(double a, double delta, double a_bar) {
  const double u = delta * a;
  if (std::abs(u) < kZohGuard) return delta;
  if (std::abs(u) < kSeriesCutoff) return std::expm1(u) / a;
  return (a_bar - 1.0) / a;
}

/// d zoh_gain / d a.
double zoh_gain_da(double a, double delta, double a_bar) {
  const double u = delta * a;
  if (std::abs(u) < kSeriesCutoff) {
    return delta * delta * (0.5 + u * (1.0 / 3.0 + u * (0.125 + u / 30.0)));
  }
  return (u * a_bar - (a_bar - 1.0)) / (a * a);
}

}  // namespace

ZohResult ssm_discretize(const Tensor& a_diag, const Tensor& b, double delta) {
  if (!(delta > 0.0)) throw DomainError("ssm_discretize: delta must be positive");
  const std::size_t n = a_diag.numel();
  if (b.rank() != 2 || b.dim(0) != n) {
    throw DimensionError("ssm_discretize: B " + shape_str(b.shape()) + " does not match A of " +
                         std::to_string(n) + " states");
  }
  ZohResult out{Tensor({n}), zeros_like(b)};
  for (std::size_t i = 0; i < n; ++i) {
    out.a_bar[i] = std::exp(delta * a_diag[i]);
    const double gain = zoh_gain(a_diag[i], delta, out.a_bar[i]);
    for (std::size_t j = 0; j < b.dim(1); ++j) out.b_bar.at(i, j) = gain * b.at(i, j);
  }
  return out;
}

namespace {

std::size_t param_rows(const Tensor& t, std::size_t steps, std::size_t state, const char* name) {
  if (t.rank() != 2 || t.dim(1) != state || (t.dim(0) != 1 && t.dim(0) != steps)) {
    throw DimensionError(std::string("ssm: parameter ") + name + " " + shape_str(t.shape()) +
                         " must be 1 x " + std::to_string(state) + " or " +
                         std::to_string(steps) + " x " + std::to_string(state));
  }
  return t.dim(0);
}

}  // namespace

Tensor ssm_scan(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c, const Tensor& x) {
  const std::size_t steps = x.numel();
  if (a_bar.rank() != 2) throw DimensionError("ssm_scan: A_bar must be rank 2");
  const std::size_t n = a_bar.dim(1);
  const bool va = param_rows(a_bar, steps, n, "A_bar") > 1;
  const bool vb = param_rows(b_bar, steps, n, "B_bar") > 1;
  const bool vc = param_rows(c, steps, n, "C") > 1;
  std::vector<double> h(n, 0.0);
  Tensor y({steps});
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t ra = va ? t : 0, rb = vb ? t : 0, rc = vc ? t : 0;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      h[i] = a_bar.at(ra, i) * h[i] + b_bar.at(rb, i) * x[t];
      acc += c.at(rc, i) * h[i];
    }
    y[t] = acc;
  }
  return y;
}

Tensor ssm_kernel(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c,
                  std::size_t length) {
  for (const Tensor* t : {&a_bar, &b_bar, &c}) {
    if (t->rank() != 2 || t->dim(0) != 1) {
      throw ContractError("ssm_conv: parameters must be time-invariant (1 x N), got " +
                          shape_str(t->shape()));
    }
  }
  const std::size_t n = a_bar.dim(1);
  if (b_bar.dim(1) != n || c.dim(1) != n) {
    throw DimensionError("ssm_kernel: state sizes disagree");
  }
  std::vector<double> power(b_bar.values());  // A_bar^j B_bar
  Tensor k({length});
  for (std::size_t j = 0; j < length; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += c[i] * power[i];
    k[j] = acc;
    for (std::size_t i = 0; i < n; ++i) power[i] *= a_bar[i];
  }
  return k;
}

Tensor ssm_conv(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c, const Tensor& x) {
  const std::size_t steps = x.numel();
  const Tensor k = ssm_kernel(a_bar, b_bar, c, steps);
  Tensor y({steps});
  for (std::size_t t = 0; t < steps; ++t) {
    double acc = 0.0;
    for (std::size_t j = 0; j <= t; ++j) acc += k[j] * x[t - j];
    y[t] = acc;
  }
  return y;
}

// ------------------------------------------------------------- slow-net init

SsmParams SsmParams::init(std::size_t d, std::size_t expand, std::size_t state, Rng& rng) {
  const std::size_t inner = d * expand;
  SsmParams p = zeros(d, expand, state);
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(d));
  const double inner_bound = 1.0 / std::sqrt(static_cast<double>(inner));
  p.w_in = rand_uniform({inner, d}, rng, -in_bound, in_bound);
  p.w_z = rand_uniform({inner, d}, rng, -in_bound, in_bound);
  p.s_b = rand_uniform({state, inner}, rng, -inner_bound, inner_bound);
  p.s_c = rand_uniform({state, inner}, rng, -inner_bound, inner_bound);
  p.s_dt = rand_uniform({1, inner}, rng, -inner_bound, inner_bound);
  // Step size starts log-uniform in [1e-3, 1e-1].
  const double dt0 = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
  p.bias_dt[0] = inverse_softplus(dt0);
  for (std::size_t c = 0; c < inner; ++c)
    for (std::size_t n = 0; n < state; ++n) p.a_log.at(c, n) = std::log(static_cast<double>(n + 1));
  p.w_out = rand_uniform({d, inner}, rng, -inner_bound, inner_bound);
  return p;
}

SsmParams SsmParams::zeros(std::size_t d, std::size_t expand, std::size_t state) {
  if (d == 0 || expand == 0 || state == 0) throw DomainError("ssm: sizes must be >= 1");
  const std::size_t inner = d * expand;
  SsmParams p;
  p.w_in = Tensor({inner, d});
  p.b_in = Tensor({inner});
  p.w_z = Tensor({inner, d});
  p.b_z = Tensor({inner});
  p.s_b = Tensor({state, inner});
  p.bias_b = Tensor({state});
  p.s_c = Tensor({state, inner});
  p.bias_c = Tensor({state});
  p.s_dt = Tensor({1, inner});
  p.bias_dt = Tensor({1});
  p.a_log = Tensor({inner, state});
  p.w_out = Tensor({d, inner});
  p.b_out = Tensor({d});
  return p;
}

LstmParams LstmParams::init(std::size_t d, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  LstmParams p;
  p.w_x = rand_uniform({4 * d, d}, rng, -bound, bound);
  p.w_h = rand_uniform({4 * d, d}, rng, -bound, bound);
  p.b = Tensor({4 * d});
  return p;
}

LstmParams LstmParams::zeros(std::size_t d) {
  if (d == 0) throw DomainError("lstm: hidden size must be >= 1");
  LstmParams p;
  p.w_x = Tensor({4 * d, d});
  p.w_h = Tensor({4 * d, d});
  p.b = Tensor({4 * d});
  return p;
}

HyperNetBundle HyperNetBundle::create(const HyperNetConfig& cfg, std::size_t n_layers,
                                      Rng& rng) {
  if (n_layers == 0) throw DomainError("hypernet bundle needs at least one layer");
  HyperNetBundle b;
  b.fast_kind = cfg.fast_kind;
  b.slow_kind = cfg.slow_kind;
  Rng fast_rng = rng.split(1);
  Rng slow_rng = rng.split(2);
  Rng emb_rng = rng.split(3);
  b.fast = cfg.fast_kind == FastKind::mlp ? FastNetParams::init(cfg.fast_hidden, fast_rng)
                                          : FastNetParams::zeros(cfg.fast_hidden);
  b.ssm = cfg.slow_kind == SlowKind::ssm
              ? SsmParams::init(cfg.d, cfg.expand, cfg.state_dim, slow_rng)
              : SsmParams::zeros(cfg.d, cfg.expand, cfg.state_dim);
  b.lstm = cfg.slow_kind == SlowKind::lstm ? LstmParams::init(cfg.d, slow_rng)
                                           : LstmParams::zeros(cfg.d);
  b.lre = randn({n_layers, cfg.d}, emb_rng);
  b.token_proj = rand_uniform({1, cfg.d}, emb_rng, -1.0, 1.0);
  const double head_bound = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  b.head_proj = rand_uniform({cfg.d, 1}, emb_rng, -head_bound, head_bound);
  return b;
}

HyperNetBundle HyperNetBundle::zeros_like() const {
  HyperNetBundle z;
  z.fast_kind = fast_kind;
  z.slow_kind = slow_kind;
  z.fast = FastNetParams::zeros(fast.hidden());
  z.ssm = SsmParams::zeros(ssm.d(), ssm.d_inner() / ssm.d(), ssm.state());
  z.lstm = LstmParams::zeros(lstm.d());
  z.lre = fsg::zeros_like(lre);
  z.token_proj = fsg::zeros_like(token_proj);
  z.head_proj = fsg::zeros_like(head_proj);
  return z;
}

// ------------------------------------------------------------ selective scan

SelectiveParams selective_params(const Tensor& tokens, const SsmParams& p) {
  if (tokens.rank() != 2 || tokens.dim(1) != p.d_inner()) {
    throw DimensionError("selective_params: tokens " + shape_str(tokens.shape()) +
                         " do not have " + std::to_string(p.d_inner()) + " channels");
  }
  if (!tokens.all_finite()) throw EvaluationError("selective_params: non-finite token");
  SelectiveParams sp;
  sp.b = row_broadcast_add(matmul_nt(tokens, p.s_b), p.bias_b);
  sp.c = row_broadcast_add(matmul_nt(tokens, p.s_c), p.bias_c);
  const Tensor dt = row_broadcast_add(matmul_nt(tokens, p.s_dt), p.bias_dt);
  const std::size_t steps = tokens.dim(0);
  sp.delta_pre = Tensor({steps});
  sp.delta = Tensor({steps});
  for (std::size_t s = 0; s < steps; ++s) {
    sp.delta_pre[s] = dt.at(s, 0);
    sp.delta[s] = softplus(dt.at(s, 0));
  }
  return sp;
}

namespace {

Tensor build_tokens(std::size_t layer_index, const std::vector<double>& history,
                    const HyperNetBundle& bundle) {
  const std::size_t d = bundle.d();
  Tensor u({history.size() + 1, d});
  for (std::size_t k = 0; k < d; ++k) u.at(0, k) = bundle.lre.at(layer_index, k);
  for (std::size_t j = 0; j < history.size(); ++j)
    for (std::size_t k = 0; k < d; ++k) u.at(j + 1, k) = history[j] * bundle.token_proj[k];
  return u;
}

/// Runs the selective block over cache.tokens, returns the full output (L x d).
Tensor ssm_block_forward(const SsmParams& p, SlowCache& cache) {
  const Tensor& u = cache.tokens;
  const std::size_t steps = u.dim(0), inner = p.d_inner(), state = p.state();
  cache.x = row_broadcast_add(matmul_nt(u, p.w_in), p.b_in);
  cache.z = row_broadcast_add(matmul_nt(u, p.w_z), p.b_z);
  cache.sel = selective_params(cache.x, p);
  cache.states.assign(steps * inner * state, 0.0);
  cache.a_bar.assign(steps * inner * state, 0.0);
  cache.phi.assign(steps * inner * state, 0.0);
  cache.y = Tensor({steps, inner});

  std::vector<double> a(inner * state);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(p.a_log[i]);

  for (std::size_t s = 0; s < steps; ++s) {
    const double delta = cache.sel.delta[s];
    const double* bs = &cache.sel.b.data()[s * state];
    const double* cs = &cache.sel.c.data()[s * state];
    for (std::size_t ch = 0; ch < inner; ++ch) {
      const double xv = cache.x.at(s, ch);
      const std::size_t base = (s * inner + ch) * state;
      double acc = 0.0;
      for (std::size_t n = 0; n < state; ++n) {
        const double an = a[ch * state + n];
        const double ab = std::exp(delta * an);
        const double gain = zoh_gain(an, delta, ab);
        const double prev = s > 0 ? cache.states[base - inner * state + n] : 0.0;
        const double h = ab * prev + gain * bs[n] * xv;
        cache.states[base + n] = h;
        cache.a_bar[base + n] = ab;
        cache.phi[base + n] = gain;
        acc += cs[n] * h;
      }
      cache.y.at(s, ch) = acc;
    }
  }

  Tensor gated({steps, inner});
  for (std::size_t i = 0; i < gated.numel(); ++i) {
    const double zv = cache.z[i];
    gated[i] = cache.y[i] * zv * sigmoid(zv);
  }
  Tensor out = row_broadcast_add(matmul_nt(gated, p.w_out), p.b_out);
  add_inplace(out, u);
  return out;
}

/// Returns d(loss)/d(tokens); parameter gradients accumulate into g.
Tensor ssm_block_backward(const SsmParams& p, const SlowCache& cache, const Tensor& g_out,
                          SsmParams& g) {
  const std::size_t steps = cache.tokens.dim(0), inner = p.d_inner(), state = p.state();

  Tensor gated({steps, inner});
  Tensor silu({steps, inner});
  Tensor silu_grad({steps, inner});
  for (std::size_t i = 0; i < gated.numel(); ++i) {
    const double zv = cache.z[i];
    const double sg = sigmoid(zv);
    silu[i] = zv * sg;
    silu_grad[i] = sg * (1.0 + zv * (1.0 - sg));
    gated[i] = cache.y[i] * silu[i];
  }

  Tensor g_tokens = g_out;  // residual branch
  add_inplace(g.w_out, matmul_tn(g_out, gated));
  add_column_sums(g_out, g.b_out);
  const Tensor g_gated = matmul(g_out, p.w_out);

  Tensor g_y({steps, inner});
  Tensor g_z({steps, inner});
  for (std::size_t i = 0; i < g_y.numel(); ++i) {
    g_y[i] = g_gated[i] * silu[i];
    g_z[i] = g_gated[i] * cache.y[i] * silu_grad[i];
  }

  std::vector<double> a(inner * state);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(p.a_log[i]);
  std::vector<double> g_a(inner * state, 0.0);
  std::vector<double> g_h(inner * state, 0.0);
  Tensor g_x({steps, inner});
  Tensor g_b({steps, state});
  Tensor g_c({steps, state});
  Tensor g_delta({steps});

  for (std::size_t s = steps; s-- > 0;) {
    const double delta = cache.sel.delta[s];
    const double* bs = &cache.sel.b.data()[s * state];
    const double* cs = &cache.sel.c.data()[s * state];
    double* gbs = &g_b.data()[s * state];
    double* gcs = &g_c.data()[s * state];
    double gd = 0.0;
    for (std::size_t ch = 0; ch < inner; ++ch) {
      const double gy = g_y.at(s, ch);
      const double xv = cache.x.at(s, ch);
      const std::size_t base = (s * inner + ch) * state;
      double gx = 0.0;
      for (std::size_t n = 0; n < state; ++n) {
        const std::size_t k = ch * state + n;
        const double h = cache.states[base + n];
        const double prev = s > 0 ? cache.states[base - inner * state + n] : 0.0;
        const double ab = cache.a_bar[base + n];
        const double gain = cache.phi[base + n];
        const double an = a[k];
        const double gh = g_h[k] + gy * cs[n];
        gcs[n] += gy * h;
        const double g_ab = gh * prev;
        const double g_bbar = gh * xv;
        gx += gh * gain * bs[n];
        gbs[n] += g_bbar * gain;
        const double g_gain = g_bbar * bs[n];
        const bool guarded = std::abs(delta * an) < kZohGuard;
        gd += g_ab * ab * an + g_gain * (guarded ? 1.0 : ab);
        g_a[k] += g_ab * ab * delta + g_gain * zoh_gain_da(an, delta, ab);
        g_h[k] = gh * ab;
      }
      g_x.at(s, ch) += gx;
    }
    g_delta[s] = gd;
  }

  for (std::size_t i = 0; i < g_a.size(); ++i) g.a_log[i] += g_a[i] * a[i];

  Tensor g_dt({steps, 1});
  for (std::size_t s = 0; s < steps; ++s) g_dt[s] = g_delta[s] * sigmoid(cache.sel.delta_pre[s]);

  add_inplace(g.s_b, matmul_tn(g_b, cache.x));
  add_column_sums(g_b, g.bias_b);
  add_inplace(g.s_c, matmul_tn(g_c, cache.x));
  add_column_sums(g_c, g.bias_c);
  add_inplace(g.s_dt, matmul_tn(g_dt, cache.x));
  add_column_sums(g_dt, g.bias_dt);
  add_inplace(g_x, matmul(g_b, p.s_b));
  add_inplace(g_x, matmul(g_c, p.s_c));
  add_inplace(g_x, matmul(g_dt, p.s_dt));

  add_inplace(g.w_in, matmul_tn(g_x, cache.tokens));
  add_column_sums(g_x, g.b_in);
  add_inplace(g.w_z, matmul_tn(g_z, cache.tokens));
  add_column_sums(g_z, g.b_z);
  add_inplace(g_tokens, matmul(g_x, p.w_in));
  add_inplace(g_tokens, matmul(g_z, p.w_z));
  return g_tokens;
}

Tensor lstm_forward(const LstmParams& p, SlowCache& cache) {
  const Tensor& u = cache.tokens;
  const std::size_t steps = u.dim(0), d = p.d();
  const Tensor pre_x = row_broadcast_add(matmul_nt(u, p.w_x), p.b);
  cache.gates = Tensor({steps, 4 * d});
  cache.cell = Tensor({steps, d});
  cache.hidden = Tensor({steps, d});
  std::vector<double> h(d, 0.0), c(d, 0.0), z(4 * d);
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t r = 0; r < 4 * d; ++r) {
      double acc = pre_x.at(s, r);
      for (std::size_t k = 0; k < d; ++k) acc += p.w_h.at(r, k) * h[k];
      z[r] = acc;
    }
    for (std::size_t k = 0; k < d; ++k) {
      const double ig = sigmoid(z[k]);
      const double fg = sigmoid(z[d + k]);
      const double gg = std::tanh(z[2 * d + k]);
      const double og = sigmoid(z[3 * d + k]);
      c[k] = fg * c[k] + ig * gg;
      h[k] = og * std::tanh(c[k]);
      cache.gates.at(s, k) = ig;
      cache.gates.at(s, d + k) = fg;
      cache.gates.at(s, 2 * d + k) = gg;
      cache.gates.at(s, 3 * d + k) = og;
      cache.cell.at(s, k) = c[k];
      cache.hidden.at(s, k) = h[k];
    }
  }
  return cache.hidden;
}

Tensor lstm_backward(const LstmParams& p, const SlowCache& cache, const Tensor& g_out,
                     LstmParams& g) {
  const std::size_t steps = cache.tokens.dim(0), d = p.d();
  Tensor dz({steps, 4 * d});
  Tensor h_prev({steps, d});
  std::vector<double> gh_rec(d, 0.0), gc_rec(d, 0.0);
  for (std::size_t s = steps; s-- > 0;) {
    for (std::size_t k = 0; k < d; ++k) {
      const double ig = cache.gates.at(s, k);
      const double fg = cache.gates.at(s, d + k);
      const double gg = cache.gates.at(s, 2 * d + k);
      const double og = cache.gates.at(s, 3 * d + k);
      const double c = cache.cell.at(s, k);
      const double c_prev = s > 0 ? cache.cell.at(s - 1, k) : 0.0;
      const double tc = std::tanh(c);
      const double gh = g_out.at(s, k) + gh_rec[k];
      const double gc = gc_rec[k] + gh * og * (1.0 - tc * tc);
      dz.at(s, k) = gc * gg * ig * (1.0 - ig);
      dz.at(s, d + k) = gc * c_prev * fg * (1.0 - fg);
      dz.at(s, 2 * d + k) = gc * ig * (1.0 - gg * gg);
      dz.at(s, 3 * d + k) = gh * tc * og * (1.0 - og);
      gc_rec[k] = gc * fg;
      h_prev.at(s, k) = s > 0 ? cache.hidden.at(s - 1, k) : 0.0;
    }
    for (std::size_t k = 0; k < d; ++k) {
      double acc = 0.0;
      for (std::size_t r = 0; r < 4 * d; ++r) acc += dz.at(s, r) * p.w_h.at(r, k);
      gh_rec[k] = acc;
    }
  }
  add_inplace(g.w_x, matmul_tn(dz, cache.tokens));
  add_inplace(g.w_h, matmul_tn(dz, h_prev));
  add_column_sums(dz, g.b);
  return matmul(dz, p.w_x);
}

}  // namespace

SlowOutput slow_forward(std::size_t layer_index, const Tensor& history, const Shape& grad_shape,
                        const HyperNetBundle& bundle) {
  if (bundle.slow_kind == SlowKind::off) throw ContractError("slow_forward: slow-net is off");
  if (layer_index >= bundle.n_layers()) {
    throw std::out_of_range("slow_forward: layer index " + std::to_string(layer_index) +
                            " out of range for " + std::to_string(bundle.n_layers()) +
                            " embeddings");
  }
  const std::size_t xi = shape_numel(grad_shape);
  if (xi == 0) throw DimensionError("slow_forward: empty gradient shape");
  if (history.numel() == 0) throw EmptyHistoryError("slow_forward: empty history");
  if (history.numel() % xi != 0) {
    throw DimensionError("slow_forward: history of " + std::to_string(history.numel()) +
                         " values is not a multiple of xi = " + std::to_string(xi));
  }

  SlowOutput out;
  SlowCache& cache = out.cache;
  cache.kind = bundle.slow_kind;
  cache.layer_index = layer_index;
  cache.xi = xi;
  cache.grad_shape = grad_shape;
  cache.history = history.values();
  cache.tokens = build_tokens(layer_index, cache.history, bundle);
  cache.length = cache.tokens.dim(0);

  const Tensor block = bundle.slow_kind == SlowKind::ssm ? ssm_block_forward(bundle.ssm, cache)
                                                         : lstm_forward(bundle.lstm, cache);
  const std::size_t d = bundle.d();
  const std::size_t first = cache.length - xi;
  cache.tail = Tensor({xi, d});
  for (std::size_t j = 0; j < xi; ++j)
    for (std::size_t k = 0; k < d; ++k) cache.tail.at(j, k) = block.at(first + j, k);
  out.grad = matmul(cache.tail, bundle.head_proj).reshaped(grad_shape);
  return out;
}

void slow_backward(const SlowCache& cache, const HyperNetBundle& bundle, const Tensor& cotangent,
                   HyperNetBundle& grads) {
  if (cotangent.numel() != cache.xi) {
    throw DimensionError("slow_backward: cotangent " + shape_str(cotangent.shape()) +
                         " does not match " + shape_str(cache.grad_shape));
  }
  const std::size_t d = bundle.d();
  const std::size_t first = cache.length - cache.xi;
  const Tensor cot = cotangent.reshaped({cache.xi, 1});

  add_inplace(grads.head_proj, matmul_tn(cache.tail, cot));
  const Tensor g_tail = matmul_nt(cot, bundle.head_proj);  // xi x d
  Tensor g_block({cache.length, d});
  for (std::size_t j = 0; j < cache.xi; ++j)
    for (std::size_t k = 0; k < d; ++k) g_block.at(first + j, k) = g_tail.at(j, k);

  const Tensor g_tokens = cache.kind == SlowKind::ssm
                              ? ssm_block_backward(bundle.ssm, cache, g_block, grads.ssm)
                              : lstm_backward(bundle.lstm, cache, g_block, grads.lstm);

  for (std::size_t k = 0; k < d; ++k) grads.lre.at(cache.layer_index, k) += g_tokens.at(0, k);
  for (std::size_t j = 0; j < cache.history.size(); ++j) {
    const double hv = cache.history[j];
    for (std::size_t k = 0; k < d; ++k) grads.token_proj[k] += hv * g_tokens.at(j + 1, k);
  }
}

// ---------------------------------------------------------------- archives

void ParamArchive::put(std::string name, Tensor value) {
  for (auto& [n, t] : entries_) {
    if (n == name) {
      t = std::move(value);
      return;
    }
  }
  entries_.emplace_back(std::move(name), std::move(value));
}

const Tensor& ParamArchive::get(std::string_view name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::out_of_range("archive has no entry '" + std::string(name) + "'");
}

bool ParamArchive::contains(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

namespace {

constexpr char kArchiveMagic[8] = {'F', 'S', 'G', 'P', 'A', 'R', 'A', 'M'};

template <typename T>
void put_le(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    std::memcpy(&bits, &value, sizeof bits);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
}

template <typename T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof bytes)) {
    throw std::runtime_error("archive truncated");
  }
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>) {
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  } else {
    return static_cast<T>(bits);
  }
}

}  // namespace

void ParamArchive::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write archive " + path);
  os.write(kArchiveMagic, sizeof kArchiveMagic);
  put_le<std::uint32_t>(os, 1);
  put_le<std::uint64_t>(os, entries_.size());
  for (const auto& [name, t] : entries_) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto dim : t.shape()) put_le<std::uint64_t>(os, dim);
    for (double v : t.data()) put_le<double>(os, v);
  }
  if (!os) throw std::runtime_error("failed writing archive " + path);
}

ParamArchive ParamArchive::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open archive " + path);
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kArchiveMagic, sizeof magic) != 0) {
    throw std::runtime_error(path + " is not a parameter archive");
  }
  const auto version = get_le<std::uint32_t>(is);
  if (version != 1) throw std::runtime_error("unsupported archive version " + std::to_string(version));
  const auto count = get_le<std::uint64_t>(is);
  ParamArchive archive;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto len = get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("archive truncated");
    const auto rank = get_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& dim : shape) dim = get_le<std::uint64_t>(is);
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = get_le<double>(is);
    archive.entries_.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return archive;
}

void store_bundle(const HyperNetBundle& bundle, ParamArchive& archive, const std::string& prefix) {
  bundle.visit([&](const char* name, const Tensor& t) { archive.put(prefix + name, t); });
}

void restore_bundle(HyperNetBundle& bundle, const ParamArchive& archive,
                    const std::string& prefix) {
  bundle.visit([&](const char* name, Tensor& t) {
    const Tensor& stored = archive.get(prefix + name);
    if (stored.shape() != t.shape()) {
      throw DimensionError(std::string("checkpoint entry ") + name + " has shape " +
                           shape_str(stored.shape()) + ", expected " + shape_str(t.shape()));
    }
    t = stored;
  });
}

}  // namespace fsg

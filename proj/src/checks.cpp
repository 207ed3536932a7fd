#include "fsg/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "fsg/config.hpp"
#include "fsg/convergence.hpp"
#include "fsg/hgs.hpp"
#include "fsg/hypernet.hpp"
#include "fsg/ops.hpp"
#include "fsg/optim.hpp"
#include "fsg/quantize.hpp"
#include "fsg/runner.hpp"
#include "fsg/trainer.hpp"

namespace fsg {

namespace {

using Clock = std::chrono::steady_clock;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double elapsed(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Error relative to the larger of the two gradients' max norms.
double rel_err(const Tensor& fd, const Tensor& an) {
  const double s = std::max({max_abs(fd), max_abs(an), 1e-300});
  return max_abs_diff(fd, an) / s;
}

/// Worst error per group name over all instances.
class ErrorTable {
 public:
  void add(const std::string& group, double err) {
    auto [it, fresh] = worst_.try_emplace(group, err);
    if (!fresh) it->second = std::max(it->second, err);
    ++count_[group];
  }
  double worst(const std::string& group) const { return worst_.at(group); }
  std::size_t count(const std::string& group) const { return count_.at(group); }
  const std::map<std::string, double>& all() const { return worst_; }

 private:
  std::map<std::string, double> worst_;
  std::map<std::string, std::size_t> count_;
};

/// FD of f with respect to `t`, which f reads in place.
Tensor fd_inplace(Tensor& t, const std::function<double()>& f, double h) {
  const Tensor saved = t;
  ScalarFn g = [&](const Tensor& p) {
    t = p;
    const double v = f();
    t = saved;
    return v;
  };
  return finite_diff_gradient(g, saved, h);
}

constexpr std::size_t kInstances = 20;

// ----------------------------------------------------------------- layers

void plain_layer_instances(ErrorTable& table, Rng& rng) {
  for (std::size_t k = 0; k < kInstances; ++k) {
    // dense
    {
      const std::size_t b = 1 + rng.below(4), in = 1 + rng.below(5), out = 1 + rng.below(5);
      Tensor x = randn({b, in}, rng), w = randn({out, in}, rng), bias = randn({out}, rng);
      const Tensor r = randn({b, out}, rng);
      auto f = [&] { return dot(r, dense_forward(x, w, bias)); };
      const DenseGrads g = dense_backward(x, w, r);
      double e = rel_err(fd_inplace(x, f, 1e-6), g.x);
      e = std::max(e, rel_err(fd_inplace(w, f, 1e-6), g.w));
      e = std::max(e, rel_err(fd_inplace(bias, f, 1e-6), g.b));
      table.add("dense", e);
    }
    // conv2d
    {
      const std::size_t b = 1 + rng.below(2), cin = 1 + rng.below(2), cout = 1 + rng.below(3);
      const std::size_t kk = 1 + rng.below(3), stride = 1 + rng.below(2), pad = rng.below(2);
      const std::size_t hw = kk + rng.below(4);
      Tensor x = randn({b, cin, hw, hw}, rng), w = randn({cout, cin, kk, kk}, rng);
      const Tensor y0 = conv2d_forward(x, w, stride, pad);
      const Tensor r = randn(y0.shape(), rng);
      auto f = [&] { return dot(r, conv2d_forward(x, w, stride, pad)); };
      const Conv2dGrads g = conv2d_backward(x, w, r, stride, pad);
      table.add("conv2d", std::max(rel_err(fd_inplace(x, f, 1e-6), g.x), rel_err(fd_inplace(w, f, 1e-6), g.w)));
    }
    // bias
    {
      const std::size_t b = 1 + rng.below(3), c = 1 + rng.below(4), s = 1 + rng.below(3);
      Tensor x = randn({b, c, s}, rng), bias = randn({c}, rng);
      const Tensor r = randn({b, c, s}, rng);
      auto f = [&] { return dot(r, bias_forward(x, bias)); };
      table.add("bias", std::max(rel_err(fd_inplace(bias, f, 1e-6), bias_backward(r, c)),
                                 rel_err(fd_inplace(x, f, 1e-6), r)));
    }
    // relu, inputs kept away from the kink
    {
      const std::size_t n = 1 + rng.below(12);
      Tensor x({n});
      for (std::size_t i = 0; i < n; ++i) x[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 2.0);
      const Tensor r = randn({n}, rng);
      auto f = [&] { return dot(r, relu_forward(x)); };
      table.add("relu", rel_err(fd_inplace(x, f, 1e-6), relu_backward(x, r)));
    }
    // softmax cross-entropy
    {
      const std::size_t b = 1 + rng.below(4), c = 2 + rng.below(4);
      Tensor logits = randn({b, c}, rng, 2.0);
      std::vector<int> labels(b);
      for (auto& l : labels) l = static_cast<int>(rng.below(c));
      const Tensor g = softmax_xent_backward(softmax_xent_forward(logits, labels), labels);
      auto f = [&] { return softmax_xent_forward(logits, labels).loss; };
      table.add("softmax_xent", rel_err(fd_inplace(logits, f, 1e-6), g));
    }
  }
}

void preprocess_instances(ErrorTable& table, Rng& rng) {
  for (std::size_t k = 0; k < kInstances; ++k) {
    const std::size_t n = 1 + rng.below(10);
    Tensor w = randn({n}, rng);
    const Preprocessed p = preprocess(w);
    const Tensor r = randn({n}, rng);
    auto f = [&] { return dot(r, preprocess(w, p.scale).w_hat); };
    table.add("preprocess", rel_err(fd_inplace(w, f, 1e-6), hadamard(r, p.da_dw)));
  }
}

// ------------------------------------------------------------ hypernetworks

void fast_instances(ErrorTable& table, Rng& rng) {
  for (std::size_t k = 0; k < kInstances; ++k) {
    const std::size_t h = 1 + rng.below(8), n = 1 + rng.below(10);
    FastNetParams p = FastNetParams::init(h, rng);
    p.visit([&](const char*, Tensor& t) {
      for (auto& v : t.data()) v += 0.3 * rng.normal();
    });
    Tensor g = randn({n}, rng), w_hat = rand_uniform({n}, rng, 0.0, 1.0);
    const Tensor r = randn({n}, rng);
    auto f = [&] { return dot(r, fast_forward(g, w_hat, p)); };
    FastNetGrads an = fast_backward(g, w_hat, p, r);
    double e = std::max(rel_err(fd_inplace(g, f, 1e-6), an.g), rel_err(fd_inplace(w_hat, f, 1e-6), an.w_hat));
    std::vector<Tensor*> grads;
    an.params.visit([&](const char*, Tensor& t) { grads.push_back(&t); });
    std::size_t i = 0;
    p.visit([&](const char*, Tensor& t) { e = std::max(e, rel_err(fd_inplace(t, f, 1e-6), *grads[i++])); });
    table.add("fast-net", e);
  }
}

std::string slow_group(std::string_view name) {
  if (name == "lre" || name == "token_proj" || name == "head_proj") return "lre/projections";
  if (name.starts_with("fast.")) return "fast-net";
  return "slow-net";
}

/// Moves the slow-net away from its init so every internal path carries
/// a gradient well above finite-difference noise (the default step sizes
/// make the scan branch nearly silent).
void excite(HyperNetBundle& bundle, Rng& rng) {
  bundle.visit([&](const char* name, Tensor& t) {
    if (std::string_view(name).starts_with("fast.")) return;
    for (auto& v : t.data()) v += 0.3 * rng.normal();
  });
  if (bundle.slow_kind == SlowKind::ssm) bundle.ssm.bias_dt[0] = rng.uniform(-1.0, 1.0);
}

/// Error of a group of tensors taken together, relative to the largest
/// gradient entry in the group.
class GroupError {
 public:
  void add(const std::string& group, const Tensor& fd, const Tensor& an) {
    auto& [diff, mag] = acc_[group];
    diff = std::max(diff, max_abs_diff(fd, an));
    mag = std::max({mag, max_abs(fd), max_abs(an)});
  }
  void flush(ErrorTable& table, const std::string& suffix = "") const {
    for (const auto& [g, dm] : acc_) table.add(g + suffix, dm.second > 0.0 ? dm.first / dm.second : dm.first);
  }

 private:
  std::map<std::string, std::pair<double, double>> acc_;
};

void slow_instances(ErrorTable& table, SlowKind kind, Rng& rng) {
  for (std::size_t k = 0; k < kInstances; ++k) {
    HyperNetConfig hc;
    hc.fast_kind = FastKind::off;
    hc.slow_kind = kind;
    hc.d = 2 + rng.below(3);
    hc.state_dim = 1 + rng.below(3);
    hc.expand = 1 + rng.below(2);
    const std::size_t layers = 1 + rng.below(3);
    HyperNetBundle bundle = HyperNetBundle::create(hc, layers, rng);
    excite(bundle, rng);
    const std::size_t layer = rng.below(layers);
    const Shape shape{1 + rng.below(2), 1 + rng.below(3)};
    const std::size_t xi = shape_numel(shape), steps = 1 + rng.below(4);
    const Tensor history = randn({xi * steps, 1}, rng);
    const Tensor r = randn(shape, rng);

    const SlowOutput out = slow_forward(layer, history, shape, bundle);
    HyperNetBundle grads = bundle.zeros_like();
    slow_backward(out.cache, bundle, r, grads);
    std::vector<const Tensor*> an;
    grads.visit([&](const char*, const Tensor& t) { an.push_back(&t); });

    auto f = [&] { return dot(r, slow_forward(layer, history, shape, bundle).grad); };
    GroupError err;
    std::size_t i = 0;
    bundle.visit([&](const char* name, Tensor& t) {
      err.add(slow_group(name), fd_inplace(t, f, 1e-5), *an[i++]);
    });
    err.flush(table, kind == SlowKind::ssm ? " (ssm)" : " (lstm)");
  }
}

/// Two binarized dense layers on a 16-point batch; the trainer has done a
/// few steps so history and previous gradient exist.
void end_to_end_instances(ErrorTable& table, SlowKind kind) {
  Rng rng(kind == SlowKind::ssm ? 31 : 32);
  for (std::size_t k = 0; k < kInstances; ++k) {
    RunConfig cfg;
    cfg.train.seed = 100 + k;
    cfg.train.lr = 0.05;
    cfg.train.batch_size = 16;
    cfg.train.hyper.slow_kind = kind;
    cfg.train.hyper.fast_hidden = 4;
    cfg.train.hyper.d = 3;
    cfg.train.hyper.state_dim = 2;
    cfg.train.lookahead = k % 2 == 0 ? LookaheadStep::lr : LookaheadStep::unit;
    cfg.data.n_per_class = 8;
    LayerSpec d1, relu, d2;
    d1.kind = LayerKind::dense;
    d1.out = 4;
    d1.binarize = true;
    relu.kind = LayerKind::relu;
    d2.kind = LayerKind::dense;
    d2.out = 2;
    d2.binarize = true;
    cfg.model.layers = {d1, relu, d2};

    const DataSplits data = build_data(cfg.data, cfg.train.seed);
    Rng mr = Rng(cfg.train.seed).split(10);
    Trainer tr(cfg.train, Model::build(cfg.model, 2, mr));
    std::vector<std::size_t> idx(data.train.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const Dataset batch = data.train.slice(idx, 0, idx.size());
    for (int s = 0; s < 3; ++s) tr.train_step(batch);
    HyperNetBundle& bundle = tr.bundle();
    excite(bundle, rng);

    PassOptions po;
    po.identity_quantizer = true;
    po.frozen_scales = tr.lookahead_pass(batch, po).scales;
    const LookaheadResult res = tr.lookahead_pass(batch, po);
    std::vector<const Tensor*> an;
    res.hyper_grads.visit([&](const char*, const Tensor& t) { an.push_back(&t); });

    auto f = [&] { return tr.lookahead_pass(batch, po).loss; };
    GroupError err;
    std::size_t i = 0;
    bundle.visit([&](const char* name, Tensor& t) {
      const bool fast = std::string_view(name).starts_with("fast.");
      err.add(fast ? "end-to-end phi_f" : "end-to-end phi_s", fd_inplace(t, f, 1e-5), *an[i++]);
    });
    err.flush(table, kind == SlowKind::ssm ? " (ssm)" : " (lstm)");
  }
}

// ----------------------------------------------------------------- helpers

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Bench results are shared by the rate and recursion checks.
struct BenchRun {
  BenchSummary summary;
  double seconds = 0.0;
};

const BenchRun& bench_run() {
  static const BenchRun run = [] {
    BenchRun r;
    const auto t0 = Clock::now();
    ConvergenceSpec spec;  // quadratic, d = 10, delta = 0.1, beta = 0.5, 10 seeds
    r.summary = run_bench(spec);
    r.seconds = elapsed(t0);
    return r;
  }();
  return run;
}

}  // namespace

// ------------------------------------------------------------------ checks

CheckResult check_gradients() {
  const auto t0 = Clock::now();
  CheckResult r{1, "gradient correctness", false, "", 0.0};
  ErrorTable table;
  Rng rng(2024);
  plain_layer_instances(table, rng);
  preprocess_instances(table, rng);
  fast_instances(table, rng);
  slow_instances(table, SlowKind::ssm, rng);
  slow_instances(table, SlowKind::lstm, rng);
  end_to_end_instances(table, SlowKind::ssm);
  end_to_end_instances(table, SlowKind::lstm);
  r.seconds = elapsed(t0);

  const std::vector<std::string> plain{"dense", "conv2d", "bias", "relu", "softmax_xent"};
  bool ok = true;
  std::string detail;
  for (const auto& [group, worst] : table.all()) {
    const bool is_plain = std::find(plain.begin(), plain.end(), group) != plain.end();
    const double tol = is_plain ? 1e-5 : 1e-4;
    ok = ok && worst < tol && table.count(group) >= kInstances;
    if (!detail.empty()) detail += "; ";
    detail += group + " " + num(worst);
  }
  r.passed = ok && r.seconds < 60.0;
  r.detail = "max rel err: " + detail;
  return r;
}

CheckResult check_ssm_duality() {
  const auto t0 = Clock::now();
  CheckResult r{2, "ssm scan/conv duality", false, "", 0.0};
  Rng rng(7);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = k % 2 == 0 ? 1 : 1 + rng.below(6);
    const std::size_t len = 1 + rng.below(64);
    Tensor a({n}), b({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = -std::exp(rng.uniform(-3.0, 1.5));
      b[i] = rng.normal();
    }
    const double delta = std::exp(rng.uniform(std::log(1e-3), std::log(1.0)));
    const ZohResult z = ssm_discretize(a, b, delta);
    const Tensor a_bar = z.a_bar.reshaped({1, n}), b_bar = z.b_bar.reshaped({1, n});
    const Tensor c = randn({1, n}, rng), x = randn({len}, rng);
    worst = std::max(worst, max_abs_diff(ssm_scan(a_bar, b_bar, c, x), ssm_conv(a_bar, b_bar, c, x)));
  }
  const ZohResult z = ssm_discretize(Tensor::vector({-1.0}), Tensor::matrix(1, 1, {1.0}), 0.1);
  const double ea = std::abs(z.a_bar[0] - 0.904837418035959573);
  const double eb = std::abs(z.b_bar[0] - 0.0951625819640404268);
  r.passed = worst < 1e-10 && ea < 1e-9 && eb < 1e-9;
  r.detail = "200 systems max |scan - conv| " + num(worst) + "; zoh A_bar err " + num(ea) + ", B_bar err " + num(eb);
  r.seconds = elapsed(t0);
  return r;
}

CheckResult check_momentum_identity() {
  const auto t0 = Clock::now();
  CheckResult r{3, "momentum expansion", false, "", 0.0};
  Rng rng(11);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double beta = rng.uniform(0.0, 0.99), alpha = rng.uniform(1e-3, 1.0);
    const Shape shape{1 + rng.below(4), 1 + rng.below(4)};
    std::vector<Tensor> grads;
    Tensor x = randn(shape, rng), v(shape);
    for (int s = 0; s < 20; ++s) {
      grads.push_back(randn(shape, rng));
      sgd_momentum_step(x, grads.back(), v, alpha, beta);
    }
    const Tensor closed = momentum_expand(beta, alpha, grads);
    worst = std::max(worst, max_abs_diff(closed, v) / std::max(1.0, max_abs(v)));
  }
  r.passed = worst < 1e-12;
  r.detail = "100 sequences x 20 steps, max diff " + num(worst);
  r.seconds = elapsed(t0);
  return r;
}

CheckResult check_degeneracy() {
  const auto t0 = Clock::now();
  CheckResult r{4, "fsg degenerates to ste", false, "", 0.0};
  RunConfig cfg;
  cfg.train.optimizer = OptimizerKind::sgd;
  cfg.train.lr = 0.05;
  cfg.train.momentum = 0.9;
  cfg.train.seed = 3;
  cfg.train.hyper.fast_kind = FastKind::identity;
  cfg.train.hyper.slow_kind = SlowKind::off;
  cfg.data.kind = DataKind::blobs;
  cfg.data.n_per_class = 64;
  cfg.data.noise = 0.5;
  LayerSpec d1, relu, d2;
  d1.kind = LayerKind::dense;
  d1.out = 8;
  d1.binarize = true;
  relu.kind = LayerKind::relu;
  d2.kind = LayerKind::dense;
  d2.out = 2;
  d2.binarize = true;
  cfg.model.layers = {d1, relu, d2};

  const DataSplits data = build_data(cfg.data, cfg.train.seed);
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle(99);
  shuffle.shuffle(order);
  std::vector<Dataset> batches;
  for (std::size_t s = 0; s <= 50; ++s) {
    const std::size_t begin = (s * 16) % order.size();
    batches.push_back(data.train.slice(order, begin, begin + 16));
  }

  TrainConfig fsg_cfg = cfg.train, ste_cfg = cfg.train;
  fsg_cfg.method = Method::fsg;
  ste_cfg.method = Method::ste;
  Rng m1 = Rng(cfg.train.seed).split(10), m2 = Rng(cfg.train.seed).split(10);
  Trainer fsg(fsg_cfg, Model::build(cfg.model, 2, m1));
  Trainer ste(ste_cfg, Model::build(cfg.model, 2, m2));

  auto same = [](const Trainer& a, const Trainer& b) {
    for (std::size_t s = 0; s < a.quant().size(); ++s)
      if (!(a.quant()[s].w == b.quant()[s].w)) return false;
    for (std::size_t i = 0; i < a.model().layers().size(); ++i)
      if (!(a.model().layers()[i].b == b.model().layers()[i].b)) return false;
    return true;
  };

  // The first FSG iteration records a gradient without updating.
  fsg.train_step(batches[0]);
  bool ok = same(fsg, ste);
  std::size_t matched = 0;
  for (std::size_t s = 1; s <= 50 && ok; ++s) {
    const StepResult a = fsg.train_step(batches[s]);
    const StepResult b = ste.train_step(batches[s]);
    ok = same(fsg, ste) && a.loss == b.loss;
    if (ok) ++matched;
  }
  r.passed = ok && matched == 50;
  r.detail = std::to_string(matched) + "/50 steps bit-identical";
  r.seconds = elapsed(t0);
  return r;
}

CheckResult check_binarization() {
  const auto t0 = Clock::now();
  CheckResult r{5, "binarization contract", false, "", 0.0};
  Rng rng(5);
  std::size_t bad_sign = 0, bad_hat = 0;
  for (int k = 0; k < 10000; ++k) {
    const Shape shape{1 + rng.below(8), 1 + rng.below(8)};
    const double mag = std::pow(10.0, rng.uniform(-8.0, 3.0));
    const Preprocessed p = preprocess(randn(shape, rng, mag));
    const Tensor q = quantize(p.w_hat, 1);
    for (std::size_t i = 0; i < q.numel(); ++i) {
      if (q[i] != 1.0 && q[i] != -1.0) ++bad_sign;
      if (!(p.w_hat[i] >= 0.0 && p.w_hat[i] <= 1.0)) ++bad_hat;
    }
  }
  const Preprocessed z = preprocess(Tensor({3, 4}));
  const Tensor zq = quantize(z.w_hat, 1);
  const bool zero_ok = z.w_hat.all_finite() && z.da_dw.all_finite() && zq.all_finite() &&
                       std::all_of(zq.values().begin(), zq.values().end(), [](double v) { return v == 1.0 || v == -1.0; });
  r.passed = bad_sign == 0 && bad_hat == 0 && zero_ok;
  r.detail = "10000 tensors: " + std::to_string(bad_sign) + " non-binary, " + std::to_string(bad_hat) +
             " w_hat out of [0,1]; zero tensor " + (zero_ok ? "finite" : "NOT finite");
  r.seconds = elapsed(t0);
  return r;
}

CheckResult check_history_buffer() {
  const auto t0 = Clock::now();
  CheckResult r{6, "history buffer contract", false, "", 0.0};
  std::size_t cases = 0, failures = 0;
  for (std::size_t l : {1, 3, 6}) {
    for (std::size_t t = 0; t <= 20; ++t) {
      const std::size_t xi = 3;
      GradientHistoryBuffer buf(0, l, xi);
      std::vector<std::vector<double>> pushed;
      for (std::size_t s = 0; s < t; ++s) {
        std::vector<double> g{100.0 * s + 1, 100.0 * s + 2, 100.0 * s + 3};
        buf.push(Tensor({xi}, g));
        pushed.push_back(g);
      }
      ++cases;
      const std::size_t keep = std::min(t, l);
      bool ok = buf.size() == keep;
      if (t == 0) {
        try {
          (void)buf.window();
          ok = false;
        } catch (const EmptyHistoryError&) {
        }
      } else {
        const Tensor w = buf.window();
        ok = ok && w.shape() == Shape{xi * keep, 1};
        std::vector<double> expect;
        for (std::size_t s = t - keep; s < t; ++s) expect.insert(expect.end(), pushed[s].begin(), pushed[s].end());
        ok = ok && w.values() == expect;
        for (std::size_t j = 0; j < xi && ok; ++j) ok = w[xi * keep - xi + j] == pushed.back()[j];
      }
      if (!ok) ++failures;
    }
  }
  r.passed = failures == 0;
  r.detail = std::to_string(cases - failures) + "/" + std::to_string(cases) + " (l, t) cases";
  r.seconds = elapsed(t0);
  return r;
}

CheckResult check_toy_training() {
  const auto t0 = Clock::now();
  CheckResult r{7, "toy training: fsg vs ste on spirals", false, "", 0.0};
  RunConfig cfg;  // spirals, noise 0.15, 400 per class, 2-32-32-2
  cfg.train.epochs = 300;
  cfg.train.batch_size = 400;
  cfg.train.lr = 0.03;
  cfg.train.optimizer = OptimizerKind::adam;
  cfg.train.beta = 0.3;
  cfg.train.l = 6;
  std::vector<double> fsg_loss, ste_loss, ste_acc;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.train.seed = seed;
    cfg.train.method = Method::ste;
    const TrainOutcome s = run_training(cfg, std::nullopt);
    ste_loss.push_back(s.final_train_loss);
    ste_acc.push_back(s.final_train_accuracy);
    cfg.train.method = Method::fsg;
    fsg_loss.push_back(run_training(cfg, std::nullopt).final_train_loss);
  }
  const double mf = median(fsg_loss), ms = median(ste_loss), ma = median(ste_acc);
  const double min_acc = *std::min_element(ste_acc.begin(), ste_acc.end());
  r.seconds = elapsed(t0);
  r.passed = mf <= ms && min_acc >= 0.9 && r.seconds < 600.0;
  r.detail = "median final train loss fsg " + num(mf) + " vs ste " + num(ms) + "; ste accuracy median " + num(ma) +
             " min " + num(min_acc);
  return r;
}

CheckResult check_convergence_rate() {
  CheckResult r{8, "convergence rate on noisy quadratics", false, "", 0.0};
  const BenchRun& run = bench_run();
  double worst_ratio = 0.0, lo = 1e300, hi = -1e300;
  for (const auto& s : run.summary.seeds) {
    worst_ratio = std::max(worst_ratio, s.worst_bound_ratio);
    lo = std::min(lo, s.slope);
    hi = std::max(hi, s.slope);
  }
  r.passed = run.summary.slopes_in_bracket >= 8 && run.summary.all_bounds_hold && run.seconds < 120.0;
  r.detail = std::to_string(run.summary.slopes_in_bracket) + "/" + std::to_string(run.summary.seeds.size()) +
             " slopes in [-1.2, -0.3] (range " + num(lo) + " .. " + num(hi) + "); bound " +
             (run.summary.all_bounds_hold ? "holds" : "VIOLATED") + ", worst gap/bound " + num(worst_ratio);
  r.seconds = run.seconds;
  return r;
}

CheckResult check_pk_recursion() {
  const auto t0 = Clock::now();
  CheckResult r{9, "p_k recursion identity", false, "", 0.0};
  const BenchRun& run = bench_run();
  r.passed = run.summary.max_pk_residual < 1e-10;
  r.detail = "max residual " + num(run.summary.max_pk_residual) + " over " +
             std::to_string(run.summary.seeds.size()) + " bench runs";
  r.seconds = elapsed(t0);
  return r;
}

CheckResult check_determinism() {
  const auto t0 = Clock::now();
  CheckResult r{10, "determinism of train", false, "", 0.0};
  RunConfig cfg;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 50;
  cfg.train.lr = 0.01;
  cfg.train.seed = 17;
  cfg.data.n_per_class = 50;
  cfg.data.test_per_class = 20;
  cfg.train.hyper.d = 4;
  cfg.train.hyper.fast_hidden = 8;
  Rng tag_rng(static_cast<std::uint64_t>(std::chrono::system_clock::now().time_since_epoch().count()));
  const auto root = std::filesystem::temp_directory_path() / ("fsg-determinism-" + hex64(tag_rng.next_u64()));
  std::string a, b;
  try {
    run_training(cfg, root / "a");
    run_training(cfg, root / "b");
    a = read_bytes(root / "a" / "metrics.csv");
    b = read_bytes(root / "b" / "metrics.csv");
  } catch (...) {
    std::filesystem::remove_all(root);
    throw;
  }
  std::filesystem::remove_all(root);
  r.passed = !a.empty() && a == b;
  r.detail = "metrics.csv " + std::to_string(a.size()) + " bytes, " + (a == b ? "identical" : "DIFFERENT");
  r.seconds = elapsed(t0);
  return r;
}

// ----------------------------------------------------------------- driver

const std::vector<CheckInfo>& check_catalog() {
  static const std::vector<CheckInfo> catalog{
      {1, "gradient correctness"},
      {2, "ssm scan/conv duality"},
      {3, "momentum expansion"},
      {4, "fsg degenerates to ste"},
      {5, "binarization contract"},
      {6, "history buffer contract"},
      {7, "toy training: fsg vs ste on spirals"},
      {8, "convergence rate on noisy quadratics"},
      {9, "p_k recursion identity"},
      {10, "determinism of train"},
  };
  return catalog;
}

std::vector<CheckResult> run_checks(const std::vector<int>& ids,
                                    const std::function<void(const CheckResult&)>& progress) {
  using Fn = CheckResult (*)();
  static const Fn table[] = {check_gradients,     check_ssm_duality,  check_momentum_identity, check_degeneracy,
                             check_binarization,  check_history_buffer, check_toy_training,   check_convergence_rate,
                             check_pk_recursion,  check_determinism};
  std::vector<int> todo = ids;
  if (todo.empty())
    for (const auto& c : check_catalog()) todo.push_back(c.id);
  std::vector<CheckResult> out;
  for (int id : todo) {
    if (id < 1 || id > 10) throw std::out_of_range("no check with id " + std::to_string(id));
    CheckResult r;
    try {
      r = table[id - 1]();
    } catch (const std::exception& e) {
      r = {id, check_catalog()[id - 1].name, false, std::string("threw: ") + e.what(), 0.0};
    }
    if (progress) progress(r);
    out.push_back(std::move(r));
  }
  return out;
}

std::string format_check(const CheckResult& r) {
  char head[96];
  std::snprintf(head, sizeof head, "[%s] %2d %s (%.2f s): ", r.passed ? "PASS" : "FAIL", r.id, r.name.c_str(),
                r.seconds);
  return head + r.detail;
}

}  // namespace fsg

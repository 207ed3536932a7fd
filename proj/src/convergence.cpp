#include "fsg/convergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fsg/ops.hpp"

namespace fsg {

std::string_view to_string(ProblemKind kind) { return kind == ProblemKind::quadratic ? "quadratic" : "logistic"; }

ProblemKind parse_problem_kind(std::string_view text) {
  if (text == "quadratic") return ProblemKind::quadratic;
  if (text == "logistic") return ProblemKind::logistic;
  throw std::invalid_argument("unknown problem '" + std::string(text) + "' (expected quadratic or logistic)");
}

namespace {

double norm2(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log1pexp(double z) { return z > 30 ? z : std::log1p(std::exp(z)); }

double dotv(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Solves the SPD system H x = g by Cholesky.
Vec solve_spd(std::vector<Vec> h, Vec g) {
  const std::size_t n = g.size();
  for (std::size_t j = 0; j < n; ++j) {
    double d = h[j][j];
    for (std::size_t k = 0; k < j; ++k) d -= h[j][k] * h[j][k];
    if (!(d > 0)) throw EvaluationError("newton: Hessian not positive definite");
    h[j][j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = h[i][j];
      for (std::size_t k = 0; k < j; ++k) s -= h[i][k] * h[j][k];
      h[i][j] = s / h[j][j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) g[i] -= h[i][k] * g[k];
    g[i] /= h[i][i];
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) g[i] -= h[k][i] * g[k];
    g[i] /= h[i][i];
  }
  return g;
}

}  // namespace

ConvexProblem ConvexProblem::quadratic(std::size_t dim, std::size_t n, double curvature, double delta,
                                       Rng& rng) {
  if (dim == 0 || n == 0) throw DomainError("quadratic problem needs dim >= 1 and n >= 1");
  if (!(curvature > 0)) throw DomainError("quadratic curvature must be positive");
  if (delta < 0) throw DomainError("noise level must be >= 0");
  ConvexProblem p;
  p.kind_ = ProblemKind::quadratic;
  p.dim_ = dim;
  p.n_ = n;
  p.curvature_ = curvature;
  p.x_star_.resize(dim);
  for (auto& v : p.x_star_) v = rng.normal();

  std::vector<Vec> dev(n, Vec(dim));
  Vec mean(dim, 0.0);
  for (auto& d : dev)
    for (std::size_t j = 0; j < dim; ++j) {
      d[j] = rng.normal();
      mean[j] += d[j] / static_cast<double>(n);
    }
  double ms = 0.0;
  for (auto& d : dev) {
    for (std::size_t j = 0; j < dim; ++j) d[j] -= mean[j];
    ms += norm2(d) / static_cast<double>(n);
  }
  // grad_i - grad = a (c_bar - c_i), so mean |.|^2 = a^2 ms.
  const double s = (delta > 0 && ms > 0 && n > 1) ? delta / (curvature * std::sqrt(ms)) : 0.0;
  p.points_.resize(n, Vec(dim));
  double spread = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) p.points_[i][j] = p.x_star_[j] + s * dev[i][j];
    spread += s * s * norm2(dev[i]) / static_cast<double>(n);
  }
  p.f_star_ = 0.5 * curvature * spread;
  return p;
}

ConvexProblem ConvexProblem::logistic(std::size_t dim, std::size_t n, double lambda, Rng& rng) {
  if (dim == 0 || n == 0) throw DomainError("logistic problem needs dim >= 1 and n >= 1");
  if (!(lambda > 0)) throw DomainError("logistic problem needs lambda > 0");
  ConvexProblem p;
  p.kind_ = ProblemKind::logistic;
  p.dim_ = dim;
  p.n_ = n;
  p.curvature_ = lambda;
  Vec planted(dim);
  for (auto& v : planted) v = rng.normal();
  p.points_.resize(n, Vec(dim));
  p.labels_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : p.points_[i]) v = rng.normal();
    const double z = dotv(planted, p.points_[i]) + 0.5 * rng.normal();
    p.labels_[i] = z >= 0 ? 1.0 : -1.0;
  }

  Vec x(dim, 0.0);
  for (int it = 0; it < 100; ++it) {
    Vec g = p.grad(x);
    if (std::sqrt(norm2(g)) < 1e-13) break;
    std::vector<Vec> h(dim, Vec(dim, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      const double s = sigmoid(p.labels_[i] * dotv(p.points_[i], x));
      const double w = s * (1.0 - s) / static_cast<double>(n);
      for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < dim; ++b) h[a][b] += w * p.points_[i][a] * p.points_[i][b];
    }
    for (std::size_t a = 0; a < dim; ++a) h[a][a] += lambda;
    const Vec step = solve_spd(h, g);
    for (std::size_t a = 0; a < dim; ++a) x[a] -= step[a];
  }
  p.x_star_ = x;
  p.f_star_ = p.f(x);
  return p;
}

double ConvexProblem::f(const Vec& x) const {
  double s = 0.0;
  if (kind_ == ProblemKind::quadratic) {
    for (const auto& c : points_) {
      double d = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) d += (x[j] - c[j]) * (x[j] - c[j]);
      s += 0.5 * curvature_ * d;
    }
    return s / static_cast<double>(n_);
  }
  for (std::size_t i = 0; i < n_; ++i) s += log1pexp(-labels_[i] * dotv(points_[i], x));
  return s / static_cast<double>(n_) + 0.5 * curvature_ * norm2(x);
}

Vec ConvexProblem::grad_i(std::size_t i, const Vec& x) const {
  Vec g(dim_);
  if (kind_ == ProblemKind::quadratic) {
    for (std::size_t j = 0; j < dim_; ++j) g[j] = curvature_ * (x[j] - points_[i][j]);
    return g;
  }
  const double m = -labels_[i] * sigmoid(-labels_[i] * dotv(points_[i], x));
  for (std::size_t j = 0; j < dim_; ++j) g[j] = m * points_[i][j] + curvature_ * x[j];
  return g;
}

Vec ConvexProblem::grad(const Vec& x) const {
  Vec g(dim_, 0.0);
  for (std::size_t i = 0; i < n_; ++i) {
    const Vec gi = grad_i(i, x);
    for (std::size_t j = 0; j < dim_; ++j) g[j] += gi[j] / static_cast<double>(n_);
  }
  return g;
}

double ConvexProblem::noise_level(const Vec& x) const {
  const Vec g = grad(x);
  double s = 0.0;
  for (std::size_t i = 0; i < n_; ++i) {
    const Vec gi = grad_i(i, x);
    for (std::size_t j = 0; j < dim_; ++j) s += (gi[j] - g[j]) * (gi[j] - g[j]);
  }
  return std::sqrt(s / static_cast<double>(n_));
}

double BenchConfig::alpha_at(std::size_t k) const {
  const double denom = per_step_alpha ? static_cast<double>(k + 1) : static_cast<double>(horizon + 1);
  return c / std::sqrt(denom);
}

Tensor make_fast_map(std::size_t dim, double lo, double hi, Rng& rng) {
  if (!(lo > 0 && hi >= lo)) throw DomainError("fast map spectrum must satisfy 0 < lo <= hi");
  const Tensor q = orthogonal_init(dim, dim, rng);
  Tensor out({dim, dim});
  for (std::size_t e = 0; e < dim; ++e) {
    const double lam = dim == 1 ? lo : lo + (hi - lo) * static_cast<double>(e) / static_cast<double>(dim - 1);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) out.at(i, j) += lam * q.at(i, e) * q.at(j, e);
  }
  return out;
}

BenchResult run_fsg_convex(const ConvexProblem& problem, const BenchConfig& cfg, Rng& rng) {
  if (!(cfg.c > 0)) throw DomainError("bench: C must be > 0");
  if (!(cfg.beta >= 0 && cfg.beta < 1)) throw DomainError("bench: beta must be in [0, 1)");
  if (cfg.horizon == 0 || cfg.repeats == 0) throw DomainError("bench: horizon and repeats must be >= 1");

  const std::size_t dim = problem.dim(), T = cfg.horizon;
  Rng map_rng = rng.split(0);
  const Tensor phi = make_fast_map(dim, cfg.omega, cfg.theta, map_rng);

  BenchResult res;
  res.omega = cfg.omega;
  res.theta = cfg.theta;
  res.kappa = std::numeric_limits<double>::infinity();
  res.x0_dist = cfg.x0_distance;
  res.gap_mean.assign(T + 1, 0.0);
  res.gap_stderr.assign(T + 1, 0.0);
  std::vector<double> gap_sq(T + 1, 0.0);

  // Fixed start at distance x0_distance from x* along a random direction.
  Rng start_rng = rng.split(1);
  Vec dir(dim);
  for (auto& v : dir) v = start_rng.normal();
  const double dn = std::sqrt(norm2(dir));
  Vec x0(dim);
  for (std::size_t j = 0; j < dim; ++j) x0[j] = problem.x_star()[j] + cfg.x0_distance * dir[j] / dn;
  res.f0_gap = problem.f(x0) - problem.f_star();

  auto hat_gap = [&](const Vec& xh) {
    if (problem.kind() == ProblemKind::quadratic) {
      double d = 0.0;
      for (std::size_t j = 0; j < dim; ++j) d += (xh[j] - problem.x_star()[j]) * (xh[j] - problem.x_star()[j]);
      return 0.5 * problem.curvature() * d;
    }
    return problem.f(xh) - problem.f_star();
  };

  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    Rng rr = rng.split(100 + r);
    IterateTrace tr;
    Vec x = x0, x_prev = x0, sum = x0, g_full;
    tr.gap.reserve(T + 1);
    tr.gap.push_back(hat_gap(x0));
    if (cfg.keep_traces) {
      tr.x.reserve(T + 1);
      tr.x.push_back(x);
    }
    for (std::size_t k = 0; k < T; ++k) {
      const double a = cfg.alpha_at(k);
      const Vec g = problem.grad_i(rr.below(problem.n()), x);
      Vec fast(dim, 0.0), zeta(dim);
      for (std::size_t i = 0; i < dim; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < dim; ++j) s += phi.at(i, j) * g[j];
        fast[i] = s;
      }
      for (auto& z : zeta) z = cfg.slow_noise * rr.normal();

      g_full = problem.grad(x);
      res.g_max = std::max(res.g_max, std::sqrt(norm2(g_full)));
      double dist = 0.0;
      for (std::size_t j = 0; j < dim; ++j) dist += (x[j] - problem.x_star()[j]) * (x[j] - problem.x_star()[j]);
      dist = std::sqrt(dist);
      res.kappa = std::min(res.kappa, dist);
      res.rho = std::max(res.rho, dist);

      Vec next(dim);
      for (std::size_t j = 0; j < dim; ++j)
        next[j] = x[j] - a * fast[j] + cfg.beta * ((x[j] - x_prev[j]) + zeta[j]);
      x_prev = x;
      x = std::move(next);
      if (std::sqrt(norm2(x)) > 1e12 || !std::isfinite(x[0])) {
        tr.diverged = true;
        res.failed = true;
        break;
      }
      for (std::size_t j = 0; j < dim; ++j) sum[j] += x[j];
      Vec xh(dim);
      for (std::size_t j = 0; j < dim; ++j) xh[j] = sum[j] / static_cast<double>(k + 2);
      tr.gap.push_back(hat_gap(xh));
      if (cfg.keep_traces) {
        tr.x.push_back(x);
        tr.fast.push_back(std::move(fast));
        tr.slow.push_back(std::move(zeta));
        tr.alpha.push_back(a);
      }
    }
    if (!tr.diverged) {
      double dist = 0.0;
      for (std::size_t j = 0; j < dim; ++j) dist += (x[j] - problem.x_star()[j]) * (x[j] - problem.x_star()[j]);
      res.kappa = std::min(res.kappa, std::sqrt(dist));
      res.rho = std::max(res.rho, std::sqrt(dist));
      for (std::size_t t = 0; t <= T; ++t) {
        res.gap_mean[t] += tr.gap[t];
        gap_sq[t] += tr.gap[t] * tr.gap[t];
      }
    }
    if (cfg.keep_traces) res.traces.push_back(std::move(tr));
  }
  if (!res.failed) {
    const double n = static_cast<double>(cfg.repeats);
    for (std::size_t t = 0; t <= T; ++t) {
      res.gap_mean[t] /= n;
      const double var = n > 1 ? std::max(0.0, gap_sq[t] / n - res.gap_mean[t] * res.gap_mean[t]) * n / (n - 1) : 0.0;
      res.gap_stderr[t] = std::sqrt(var / n);
    }
  }
  res.delta = problem.noise_level(problem.x_star());
  return res;
}

double pk_recursion_check(const IterateTrace& trace, double beta) {
  if (trace.x.size() < 2 || trace.fast.size() + 1 != trace.x.size() || trace.slow.size() != trace.fast.size() ||
      trace.alpha.size() != trace.fast.size()) {
    throw ContractError("pk_recursion_check: trace lacks recorded update terms");
  }
  if (!(beta >= 0 && beta < 1)) throw DomainError("pk_recursion_check: beta must be in [0, 1)");
  const double c = beta / (1.0 - beta);
  const std::size_t dim = trace.x[0].size();
  auto p = [&](std::size_t k, std::size_t j) {
    return k == 0 ? 0.0 : c * (trace.x[k][j] - trace.x[k - 1][j]);
  };
  double worst = 0.0;
  for (std::size_t k = 0; k + 1 < trace.x.size(); ++k) {
    const double a = trace.alpha[k] / (1.0 - beta);
    for (std::size_t j = 0; j < dim; ++j) {
      const double lhs = trace.x[k + 1][j] + p(k + 1, j);
      const double rhs = trace.x[k][j] + p(k, j) - a * trace.fast[k][j] + c * trace.slow[k][j];
      worst = std::max(worst, std::abs(lhs - rhs));
    }
  }
  return worst;
}

double rate_fit(const std::vector<double>& gap, std::size_t t_lo, std::size_t t_hi) {
  if (t_hi >= gap.size()) t_hi = gap.size() - 1;
  if (t_lo >= t_hi) throw DomainError("rate_fit: window [" + std::to_string(t_lo) + ", " + std::to_string(t_hi) + "] is empty");
  const auto pts = log_points(t_lo, t_hi, 200);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t t : pts) {
    if (!(gap[t] > 0)) throw DomainError("rate_fit: non-positive gap at t = " + std::to_string(t));
    const double lx = std::log(static_cast<double>(t + 1)), ly = std::log(gap[t]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double n = static_cast<double>(pts.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

double theorem_bound(const BenchResult& r, const BenchConfig& cfg, std::size_t t) {
  const double b = cfg.beta, a = cfg.alpha_at(0), tp = static_cast<double>(t + 1);
  return b / ((1 - b) * tp) * r.f0_gap + (1 - b) * r.x0_dist * r.x0_dist / (2 * a * r.omega * r.kappa * tp) +
         a * r.theta * r.rho * (r.g_max * r.g_max + r.delta * r.delta) / (2 * r.omega * r.kappa * (1 - b));
}

std::vector<std::size_t> log_points(std::size_t lo, std::size_t hi, std::size_t count) {
  if (lo == 0 || hi < lo) throw DomainError("log_points: need 1 <= lo <= hi");
  std::vector<std::size_t> out;
  const double a = std::log(static_cast<double>(lo)), b = std::log(static_cast<double>(hi));
  for (std::size_t i = 0; i < count; ++i) {
    const double f = count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(count - 1);
    const auto t = static_cast<std::size_t>(std::llround(std::exp(a + f * (b - a))));
    if (out.empty() || out.back() != t) out.push_back(std::clamp(t, lo, hi));
  }
  return out;
}

}  // namespace fsg

#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "fsg/tensor.hpp"

namespace fsg {

using Vec = std::vector<double>;

enum class ProblemKind { quadratic, logistic };

std::string_view to_string(ProblemKind kind);
ProblemKind parse_problem_kind(std::string_view text);

/// f(x) = (1/N) sum_i f_i(x), either quadratics (a/2)|x - c_i|^2 or
/// L2-regularized logistic terms log(1 + exp(-b_i a_i.x)) + (lambda/2)|x|^2.
class ConvexProblem {
 public:
  /// Centers are placed so that the per-sample gradient noise has mean
  /// squared norm exactly delta^2 at every x.
  static ConvexProblem quadratic(std::size_t dim, std::size_t n, double curvature, double delta, Rng& rng);
  /// Random Gaussian features with labels from a planted separator; x* is
  /// found by Newton's method to gradient norm < 1e-13.
  static ConvexProblem logistic(std::size_t dim, std::size_t n, double lambda, Rng& rng);

  ProblemKind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t n() const noexcept { return n_; }
  const Vec& x_star() const noexcept { return x_star_; }
  double f_star() const noexcept { return f_star_; }
  double curvature() const noexcept { return curvature_; }

  double f(const Vec& x) const;
  Vec grad(const Vec& x) const;
  Vec grad_i(std::size_t i, const Vec& x) const;
  /// Root-mean-square gradient noise at x: sqrt(mean_i |grad_i - grad|^2).
  double noise_level(const Vec& x) const;

 private:
  ProblemKind kind_ = ProblemKind::quadratic;
  std::size_t dim_ = 0;
  std::size_t n_ = 0;
  double curvature_ = 1.0;  // quadratic a, or logistic lambda
  std::vector<Vec> points_;  // centers c_i or features a_i
  Vec labels_;
  Vec x_star_;
  double f_star_ = 0.0;
};

struct BenchConfig {
  double c = 10.0;
  double beta = 0.5;
  std::size_t horizon = 10000;  // T
  std::size_t repeats = 10;
  double omega = 0.8;           // smallest eigenvalue of the fast map
  double theta = 1.2;           // largest eigenvalue of the fast map
  double slow_noise = 0.1;      // std of the zero-mean slow-branch error
  double x0_distance = 1.0;
  bool per_step_alpha = false;  // alpha_k = C / sqrt(k + 1) instead of C / sqrt(T + 1)
  bool keep_traces = true;

  double alpha_at(std::size_t k) const;
};

/// One repeat: iterates x_0..x_T and the realized update terms.
struct IterateTrace {
  std::vector<Vec> x;       // T + 1 iterates
  std::vector<Vec> fast;    // Phi_f(G_k), T entries
  std::vector<Vec> slow;    // Delta_s^k noise, T entries
  std::vector<double> alpha;
  std::vector<double> gap;  // f(xhat_t) - f*, t = 0..T
  std::vector<Vec> x_hat;   // running average, only when requested
  bool diverged = false;
};

struct BenchResult {
  std::vector<double> gap_mean;    // t = 0..T
  std::vector<double> gap_stderr;
  std::vector<IterateTrace> traces;  // when keep_traces
  bool failed = false;
  // Realized theorem constants.
  double omega = 0.0, theta = 0.0, kappa = 0.0, rho = 0.0;
  double g_max = 0.0, delta = 0.0, f0_gap = 0.0, x0_dist = 0.0;
};

/// x_{k+1} = x_k - alpha Phi G_k + beta ((x_k - x_{k-1}) + zeta_k), with G_k a
/// single sampled component gradient, Phi a fixed SPD map with spectrum in
/// [omega, theta] and zeta_k ~ N(0, slow_noise^2 I). x_{-1} = x_0.
BenchResult run_fsg_convex(const ConvexProblem& problem, const BenchConfig& cfg, Rng& rng);

/// Fixed SPD (dim x dim) matrix with eigenvalues evenly spread over [lo, hi].
Tensor make_fast_map(std::size_t dim, double lo, double hi, Rng& rng);

/// Max over k of |x_{k+1} + p_{k+1} - (x_k + p_k - a/(1-b) Phi G_k + b/(1-b) Delta_k)|
/// with p_k = b/(1-b)(x_k - x_{k-1}) and p_0 = 0.
double pk_recursion_check(const IterateTrace& trace, double beta);

/// Least-squares slope of log(gap) against log(t + 1) for t in [t_lo, t_hi].
/// Throws DomainError naming the first non-positive gap in the window.
double rate_fit(const std::vector<double>& gap, std::size_t t_lo = 100, std::size_t t_hi = 10000);

/// Right-hand side of the FSG convergence bound with alpha held fixed.
double theorem_bound(const BenchResult& r, const BenchConfig& cfg, std::size_t t);

/// Log-spaced, deduplicated integer points in [lo, hi].
std::vector<std::size_t> log_points(std::size_t lo, std::size_t hi, std::size_t count);

}  // namespace fsg

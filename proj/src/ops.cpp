#include "fsg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fsg {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out({m, n});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = &o[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double s = x[i * k + p];
      const double* brow = &y[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_tn");
  require_rank(b, 2, "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul_tn: leading dimensions disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = &y[p * n];
    for (std::size_t i = 0; i < m; ++i) {
      const double s = x[p * m + i];
      if (s == 0.0) continue;
      double* row = &o[i * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: trailing dimensions disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  Tensor out({m, n});
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = &x[i * k];
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = &y[j * k];
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      o[i * n + j] = s;
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 2, "dense_forward");
  require_rank(w, 2, "dense_forward");
  if (b.numel() != w.dim(0)) {
    throw DimensionError("dense_forward: bias " + shape_str(b.shape()) + " vs weight " +
                         shape_str(w.shape()));
  }
  Tensor y = matmul_nt(x, w);
  const std::size_t n = y.dim(1);
  for (std::size_t i = 0; i < y.dim(0); ++i)
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) += b[j];
  return y;
}

DenseGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& g_out) {
  require_rank(g_out, 2, "dense_backward");
  if (g_out.dim(0) != x.dim(0) || g_out.dim(1) != w.dim(0)) {
    throw DimensionError("dense_backward: cotangent " + shape_str(g_out.shape()) +
                         " does not match output of " + shape_str(x.shape()) + " x " +
                         shape_str(w.shape()) + "^T");
  }
  DenseGrads g;
  g.x = matmul(g_out, w);
  g.w = matmul_tn(g_out, x);
  g.b = Tensor({w.dim(0)});
  for (std::size_t i = 0; i < g_out.dim(0); ++i)
    for (std::size_t j = 0; j < g_out.dim(1); ++j) g.b[j] += g_out.at(i, j);
  return g;
}

std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride,
                          std::size_t pad) {
  if (stride == 0) throw DomainError("conv2d: stride must be >= 1");
  if (kernel > in + 2 * pad) {
    throw DimensionError("conv2d: kernel " + std::to_string(kernel) +
                         " larger than padded input " + std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

namespace {

struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, k, oh, ow;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, std::size_t stride,
                           std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  if (w.dim(1) != x.dim(1)) {
    throw DimensionError("conv2d: input channels disagree, input " + shape_str(x.shape()) +
                         " vs kernel " + shape_str(w.shape()));
  }
  if (w.dim(2) != w.dim(3)) {
    throw DimensionError("conv2d: kernel must be square, got " + shape_str(w.shape()));
  }
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), 0, 0};
  g.oh = conv_out_size(g.h, g.k, stride, pad);
  g.ow = conv_out_size(g.w, g.k, stride, pad);
  return g;
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const auto g = conv_geometry(x, w, stride, pad);
  Tensor out({g.batch, g.cout, g.oh, g.ow});
  const auto xs = x.data();
  const auto ws = w.data();
  auto os = out.data();
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.k; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ipad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ipad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                acc += xs[((b * g.cin + ci) * g.h + iy) * g.w + ix] *
                       ws[((co * g.cin + ci) * g.k + ky) * g.k + kx];
              }
            }
          os[((b * g.cout + co) * g.oh + oy) * g.ow + ox] = acc;
        }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& g_out,
                            std::size_t stride, std::size_t pad) {
  const auto g = conv_geometry(x, w, stride, pad);
  const Shape expected{g.batch, g.cout, g.oh, g.ow};
  if (g_out.shape() != expected) {
    throw DimensionError("conv2d_backward: cotangent " + shape_str(g_out.shape()) +
                         " does not match output " + shape_str(expected));
  }
  Conv2dGrads grads{zeros_like(x), zeros_like(w)};
  const auto xs = x.data();
  const auto ws = w.data();
  const auto gs = g_out.data();
  auto gx = grads.x.data();
  auto gw = grads.w.data();
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.cout; ++co)
      for (std::size_t oy = 0; oy < g.oh; ++oy)
        for (std::size_t ox = 0; ox < g.ow; ++ox) {
          const double go = gs[((b * g.cout + co) * g.oh + oy) * g.ow + ox];
          if (go == 0.0) continue;
          for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t ky = 0; ky < g.k; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ipad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t kx = 0; kx < g.k; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ipad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                const std::size_t xi = ((b * g.cin + ci) * g.h + iy) * g.w + ix;
                const std::size_t wi = ((co * g.cin + ci) * g.k + ky) * g.k + kx;
                gx[xi] += go * ws[wi];
                gw[wi] += go * xs[xi];
              }
            }
        }
  return grads;
}

Tensor bias_forward(const Tensor& x, const Tensor& b) {
  if (x.rank() < 2 || x.dim(1) != b.numel()) {
    throw DimensionError("bias_forward: bias " + shape_str(b.shape()) +
                         " does not match channels of " + shape_str(x.shape()));
  }
  Tensor y = x;
  const std::size_t channels = x.dim(1);
  const std::size_t inner = x.numel() / (x.dim(0) * channels);
  auto ys = y.data();
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < inner; ++i) ys[(n * channels + c) * inner + i] += b[c];
  return y;
}

Tensor bias_backward(const Tensor& g_out, std::size_t channels) {
  if (g_out.rank() < 2 || g_out.dim(1) != channels) {
    throw DimensionError("bias_backward: cotangent " + shape_str(g_out.shape()) +
                         " does not have " + std::to_string(channels) + " channels");
  }
  Tensor gb({channels});
  const std::size_t inner = g_out.numel() / (g_out.dim(0) * channels);
  const auto gs = g_out.data();
  for (std::size_t n = 0; n < g_out.dim(0); ++n)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < inner; ++i) gb[c] += gs[(n * channels + c) * inner + i];
  return gb;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& g_out) {
  require_same_shape(x, g_out, "relu_backward");
  Tensor g = g_out;
  for (std::size_t i = 0; i < g.numel(); ++i)
    if (!(x[i] > 0.0)) g[i] = 0.0;
  return g;
}

SoftmaxXent softmax_xent_forward(const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "softmax_xent");
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                         shape_str(logits.shape()) + " logits");
  }
  if (batch == 0) throw ContractError("softmax_xent: empty batch");
  SoftmaxXent out;
  out.probs = zeros_like(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw DomainError("softmax_xent: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(k) + ")");
    }
    double mx = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (logits.at(i, j) > mx) {
        mx = logits.at(i, j);
        arg = j;
      }
    }
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits.at(i, j) - mx);
    for (std::size_t j = 0; j < k; ++j) out.probs.at(i, j) = std::exp(logits.at(i, j) - mx) / z;
    total += std::log(z) - (logits.at(i, static_cast<std::size_t>(y)) - mx);
    if (arg == static_cast<std::size_t>(y)) ++out.correct;
  }
  out.loss = total / static_cast<double>(batch);
  return out;
}

Tensor softmax_xent_backward(const SoftmaxXent& fwd, const std::vector<int>& labels) {
  Tensor g = fwd.probs;
  const std::size_t batch = g.dim(0);
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    g.at(i, static_cast<std::size_t>(labels[i])) -= 1.0;
    for (std::size_t j = 0; j < g.dim(1); ++j) g.at(i, j) *= inv;
  }
  return g;
}

Tensor finite_diff_gradient(const ScalarFn& f, const Tensor& point, double h) {
  if (!(h > 0.0)) throw DomainError("finite difference step must be positive");
  Tensor x = point;
  Tensor grad = zeros_like(point);
  for (std::size_t j = 0; j < x.numel(); ++j) {
    const double orig = x[j];
    x[j] = orig + h;
    const double fp = f(x);
    x[j] = orig - h;
    const double fm = f(x);
    x[j] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw EvaluationError("finite_diff: non-finite function value at coordinate " +
                            std::to_string(j));
    }
    grad[j] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double finite_diff_check(const ScalarFn& f, const Tensor& point, const Tensor& analytic,
                         double h, double floor) {
  require_same_shape(point, analytic, "finite_diff_check");
  const Tensor numeric = finite_diff_gradient(f, point, h);
  double worst = 0.0;
  for (std::size_t j = 0; j < numeric.numel(); ++j) {
    const double err = std::abs(numeric[j] - analytic[j]) / (std::abs(analytic[j]) + floor);
    worst = std::max(worst, err);
  }
  return worst;
}

Tensor orthogonal_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw DimensionError("orthogonal_init: sizes must be >= 1");
  const bool tall = rows >= cols;
  const std::size_t n = tall ? rows : cols;  // vector length
  const std::size_t m = tall ? cols : rows;  // number of orthonormal vectors
  std::vector<std::vector<double>> basis;
  basis.reserve(m);
  while (basis.size() < m) {
    std::vector<double> v(n);
    for (auto& e : v) e = rng.normal();
    // Two passes of modified Gram-Schmidt keep the result orthogonal to
    // working precision.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : basis) {
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) d += q[i] * v[i];
        for (std::size_t i = 0; i < n; ++i) v[i] -= d * q[i];
      }
    }
    double norm = 0.0;
    for (double e : v) norm += e * e;
    norm = std::sqrt(norm);
    if (norm < 1e-10) continue;  // degenerate draw, resample
    for (auto& e : v) e /= norm;
    basis.push_back(std::move(v));
  }
  Tensor out({rows, cols});
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < n; ++i) {
      if (tall)
        out.at(i, j) = basis[j][i];
      else
        out.at(j, i) = basis[j][i];
    }
  return out;
}

}  // namespace fsg

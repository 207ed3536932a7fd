#pragma once

#include <functional>
#include <vector>

#include "fsg/tensor.hpp"

namespace fsg {

// Layer kernels with explicit forward and backward rules. There is no
// autograd tape: every caller threads the cached inputs into backward itself.

/// (m x k) * (k x n). Summation runs over k in increasing order.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T * b without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// y = x * w^T + b with x: (B x in), w: (out x in), b: (out).
Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b);

struct DenseGrads {
  Tensor x;
  Tensor w;
  Tensor b;
};

DenseGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& g_out);

/// Output spatial size of a convolution; throws DimensionError when the
/// kernel does not fit the padded input.
std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride,
                          std::size_t pad);

/// Cross-correlation: x (B x Cin x H x W), w (Cout x Cin x K x K).
Tensor conv2d_forward(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad);

struct Conv2dGrads {
  Tensor x;
  Tensor w;
};

Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& g_out,
                            std::size_t stride, std::size_t pad);

/// Adds b[c] to every element of channel c (axis 1).
Tensor bias_forward(const Tensor& x, const Tensor& b);
Tensor bias_backward(const Tensor& g_out, std::size_t channels);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& g_out);

struct SoftmaxXent {
  double loss = 0.0;      // mean over the batch
  Tensor probs;           // (B x K)
  std::size_t correct = 0;
};

/// Softmax followed by mean cross-entropy against integer labels.
SoftmaxXent softmax_xent_forward(const Tensor& logits, const std::vector<int>& labels);
/// d(mean loss)/d(logits) = (probs - onehot) / B.
Tensor softmax_xent_backward(const SoftmaxXent& fwd, const std::vector<int>& labels);

using ScalarFn = std::function<double(const Tensor&)>;

/// Central-difference gradient check.
///
/// Returns max_j |(f(x + h e_j) - f(x - h e_j)) / 2h - g_j| / (|g_j| + floor).
/// Coordinates whose true derivative is ~0 need a floor above the 1e-12
/// default. Throws EvaluationError if f returns a non-finite value.
double finite_diff_check(const ScalarFn& f, const Tensor& point, const Tensor& analytic,
                         double h = 1e-6, double floor = 1e-12);

/// Central-difference gradient of f at point.
Tensor finite_diff_gradient(const ScalarFn& f, const Tensor& point, double h = 1e-6);

/// Semi-orthogonal (rows x cols) matrix from Gram-Schmidt on Gaussian draws:
/// M^T M = I when rows >= cols, M M^T = I otherwise.
Tensor orthogonal_init(std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace fsg

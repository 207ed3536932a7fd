#pragma once

#include <optional>

#include "fsg/tensor.hpp"

namespace fsg {

/// Below this value of max|tanh(W)| a layer is treated as all-zero.
inline constexpr double kDegenerateScale = 1e-12;

struct Preprocessed {
  Tensor w_hat;   // tanh(W) / (2 max|tanh(W)|) + 1/2, entries in [0, 1]
  Tensor da_dw;   // elementwise derivative, max treated as a constant
  double scale;   // max|tanh(W)| actually used
};

/// DoReFa weight normalization.
///
/// With `fixed_scale` the normalizer is taken as given instead of measured,
/// which is the surrogate the analytic derivative differentiates; a
/// degenerate (all-zero) layer yields w_hat = 0.5 and da_dw = 0.
Preprocessed preprocess(const Tensor& w, std::optional<double> fixed_scale = std::nullopt);

/// k-bit uniform quantizer: 2 * round((2^k - 1) w_hat) / (2^k - 1) - 1, with
/// ties rounded away from zero. For k = 1 the output is in {-1, +1}.
Tensor quantize(const Tensor& w_hat, int bits = 1);

/// Straight-through estimator across the quantizer: identity.
Tensor ste_backward(const Tensor& g_out);

/// Full-precision weights of one binarized layer plus everything derived
/// from them during a step.
struct QuantLayerState {
  std::size_t layer_index = 0;
  int bits = 1;
  Tensor w;
  Tensor w_hat;
  Tensor w_b;
  Tensor da_dw;
  Tensor registered_grad;

  QuantLayerState() = default;
  QuantLayerState(std::size_t index, Tensor weights, int bits = 1);

  /// Recompute w_hat, da_dw and w_b from w.
  void refresh();
};

}  // namespace fsg

#include "fsg/quantize.hpp"

#include <algorithm>
#include <cmath>

namespace fsg {

Preprocessed preprocess(const Tensor& w, std::optional<double> fixed_scale) {
  if (!w.all_finite()) throw EvaluationError("preprocess: non-finite weight");
  Tensor t = w;
  for (auto& v : t.data()) v = std::tanh(v);
  const double scale = fixed_scale ? *fixed_scale : max_abs(t);

  Preprocessed out{zeros_like(w), zeros_like(w), scale};
  if (!(scale >= kDegenerateScale)) {
    out.w_hat.fill(0.5);
    return out;
  }
  const double inv = 1.0 / (2.0 * scale);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const double v = t[i] * inv + 0.5;
    // A measured scale bounds |tanh| by construction; only rounding can leave [0, 1].
    out.w_hat[i] = fixed_scale ? v : std::clamp(v, 0.0, 1.0);
    out.da_dw[i] = (1.0 - t[i] * t[i]) * inv;
  }
  return out;
}

Tensor quantize(const Tensor& w_hat, int bits) {
  if (bits < 1 || bits > 30) throw DomainError("quantize: bit-width must be in [1, 30]");
  const double levels = std::ldexp(1.0, bits) - 1.0;
  Tensor out = zeros_like(w_hat);
  for (std::size_t i = 0; i < w_hat.numel(); ++i) {
    const double v = w_hat[i];
    if (!(v >= -1e-9 && v <= 1.0 + 1e-9)) {
      throw DomainError("quantize: input " + std::to_string(v) + " outside [0, 1]");
    }
    // std::round breaks ties away from zero.
    out[i] = 2.0 * std::round(levels * v) / levels - 1.0;
  }
  return out;
}

Tensor ste_backward(const Tensor& g_out) { return g_out; }

QuantLayerState::QuantLayerState(std::size_t index, Tensor weights, int bits_)
    : layer_index(index), bits(bits_), w(std::move(weights)) {
  registered_grad = zeros_like(w);
  refresh();
}

void QuantLayerState::refresh() {
  auto pre = preprocess(w);
  w_hat = std::move(pre.w_hat);
  da_dw = std::move(pre.da_dw);
  w_b = quantize(w_hat, bits);
}

}  // namespace fsg

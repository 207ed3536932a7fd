#include "fsg/optim.hpp"

#include <cmath>
#include <string>

namespace fsg {

void sgd_step(Tensor& x, const Tensor& g, double lr) {
  require_same_shape(x, g, "sgd_step");
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] -= lr * g[i];
}

void sgd_momentum_step(Tensor& x, const Tensor& g, Tensor& v, double lr, double momentum) {
  require_same_shape(x, g, "sgd_momentum_step");
  if (v.empty()) v = zeros_like(x);
  require_same_shape(x, v, "sgd_momentum_step velocity");
  for (std::size_t i = 0; i < x.numel(); ++i) {
    v[i] = momentum * v[i] - lr * g[i];
    x[i] += v[i];
  }
}

void adam_step(Tensor& x, const Tensor& g, AdamState& state, double lr, const AdamHyper& hp) {
  require_same_shape(x, g, "adam_step");
  if (state.m.empty()) {
    state.m = zeros_like(x);
    state.v = zeros_like(x);
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < x.numel(); ++i) {
    state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g[i];
    state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g[i] * g[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    x[i] -= lr * m_hat / (std::sqrt(v_hat) + hp.eps);
  }
}

Tensor momentum_expand(double beta, double alpha, const std::vector<Tensor>& grads) {
  if (grads.empty()) throw ContractError("momentum_expand: no gradients");
  Tensor out = zeros_like(grads.front());
  const std::size_t steps = grads.size();
  for (std::size_t k = 0; k < steps; ++k) {
    const double w = -alpha * std::pow(beta, static_cast<double>(steps - 1 - k));
    axpy(w, grads[k], out);
  }
  return out;
}

std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer_kind(std::string_view text) {
  if (text == "sgd") return OptimizerKind::sgd;
  if (text == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(text) + "' (expected sgd or adam)");
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double momentum, AdamHyper hp)
    : kind_(kind), lr_(lr), momentum_(momentum), hp_(hp) {
  if (!(lr > 0.0)) throw DomainError("optimizer learning rate must be positive");
}

void Optimizer::step(std::size_t slot, Tensor& x, const Tensor& g) {
  if (kind_ == OptimizerKind::adam) {
    if (adam_.size() <= slot) adam_.resize(slot + 1);
    adam_step(x, g, adam_[slot], lr_, hp_);
    return;
  }
  if (momentum_ == 0.0) {
    sgd_step(x, g, lr_);
    return;
  }
  if (velocity_.size() <= slot) velocity_.resize(slot + 1);
  sgd_momentum_step(x, g, velocity_[slot], lr_, momentum_);
}

std::vector<const Tensor*> Optimizer::state_tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& v : velocity_) out.push_back(&v);
  for (const auto& a : adam_) {
    out.push_back(&a.m);
    out.push_back(&a.v);
  }
  return out;
}

}  // namespace fsg

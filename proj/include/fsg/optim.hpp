#pragma once

#include <string_view>
#include <vector>

#include "fsg/tensor.hpp"

namespace fsg {

/// x <- x - lr * g
void sgd_step(Tensor& x, const Tensor& g, double lr);

/// v <- momentum * v - lr * g;  x <- x + v
void sgd_momentum_step(Tensor& x, const Tensor& g, Tensor& v, double lr, double momentum);

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamHyper&) const = default;
};

struct AdamState {
  Tensor m;
  Tensor v;
  long step = 0;
};

/// Bias-corrected Adam update. Initializes `state` on first use.
void adam_step(Tensor& x, const Tensor& g, AdamState& state, double lr, const AdamHyper& hp = {});

/// Closed form of the momentum after T steps from v_0 = 0:
/// -alpha * sum_k beta^(T-1-k) g_k.
Tensor momentum_expand(double beta, double alpha, const std::vector<Tensor>& grads);

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(std::string_view text);

/// Stateful optimizer over a fixed, ordered list of parameter slots.
/// Plain SGD when kind is sgd and momentum is 0.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double lr, double momentum = 0.0, AdamHyper hp = {});

  OptimizerKind kind() const noexcept { return kind_; }
  double lr() const noexcept { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  void step(std::size_t slot, Tensor& x, const Tensor& g);

  /// Every accumulator, in slot order (for checksums and checkpoints).
  std::vector<const Tensor*> state_tensors() const;

 private:
  OptimizerKind kind_ = OptimizerKind::sgd;
  double lr_ = 1e-3;
  double momentum_ = 0.0;
  AdamHyper hp_;
  std::vector<Tensor> velocity_;
  std::vector<AdamState> adam_;
};

}  // namespace fsg

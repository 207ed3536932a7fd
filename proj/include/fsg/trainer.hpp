#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "fsg/data.hpp"
#include "fsg/hgs.hpp"
#include "fsg/hypernet.hpp"
#include "fsg/model.hpp"
#include "fsg/optim.hpp"
#include "fsg/quantize.hpp"

namespace fsg {

enum class Method { fsg, ste };
enum class HistorySource { raw, composed };
/// Look-ahead weights: W - lr * G (lr) or W - G (unit).
enum class LookaheadStep { lr, unit };

std::string_view to_string(Method m);
Method parse_method(std::string_view text);
std::string_view to_string(HistorySource h);
HistorySource parse_history_source(std::string_view text);
std::string_view to_string(LookaheadStep s);
LookaheadStep parse_lookahead_step(std::string_view text);

struct TrainConfig {
  Method method = Method::fsg;
  double alpha = 1.0;
  double beta = 0.3;
  std::size_t l = 6;
  int bits = 1;
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-3;
  double momentum = 0.9;  // sgd only; 0 gives plain SGD
  AdamHyper adam;
  double hyper_lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::size_t lr_decay_every = 30;
  double lr_decay_factor = 0.1;
  std::uint64_t seed = 0;
  HyperNetConfig hyper;
  HistorySource history_source = HistorySource::raw;
  LookaheadStep lookahead = LookaheadStep::lr;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  /// Learning rate in effect during a 0-based epoch.
  double lr_at(std::size_t epoch) const;

  bool operator==(const TrainConfig&) const = default;
};

/// alpha * g_fast * dA_dW - beta * g_slow, with an absent g_slow treated as
/// zero. The optimizer subtracts the result, so a positive slow term pushes
/// the weights along it.
Tensor compose_gradient(const Tensor& g_fast, const Tensor* g_slow, const Tensor& da_dw, double alpha,
                        double beta);

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::size_t iteration, const std::string& what)
      : std::runtime_error("diverged at iteration " + std::to_string(iteration) + ": " + what),
        iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

struct StepResult {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
  bool updated = false;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;
};

/// Options for the look-ahead pass. The surrogate settings replace the
/// quantizer by the identity and freeze each layer's normalizer so the
/// pass is smooth in the hypernetwork parameters.
struct PassOptions {
  bool identity_quantizer = false;
  std::vector<double> frozen_scales;  // per quantized slot; empty = measured
};

struct LookaheadResult {
  double loss = 0.0;
  std::size_t correct = 0;
  HyperNetBundle hyper_grads;
  ModelGrads model_grads;
  std::vector<Tensor> g_b;       // dloss/d(quantizer output) per slot
  std::vector<Tensor> slow_out;  // M_s output per slot, empty when absent
  std::vector<double> scales;    // normalizer of W' per slot
};

/// Training loop for one model. Quantized layers keep their full-precision
/// weights in `quant()`; their copies in `model()` are kept in sync.
class Trainer {
 public:
  Trainer(TrainConfig cfg, Model model);

  const TrainConfig& config() const noexcept { return cfg_; }
  const Model& model() const noexcept { return model_; }
  const HyperNetBundle& bundle() const noexcept { return bundle_; }
  HyperNetBundle& bundle() noexcept { return bundle_; }
  const std::vector<QuantLayerState>& quant() const noexcept { return quant_; }
  const std::vector<GradientHistoryBuffer>& buffers() const noexcept { return buffers_; }
  std::size_t iteration() const noexcept { return iteration_; }
  /// Scale s applied to G in the look-ahead weights.
  double lookahead_scale() const noexcept;

  StepResult train_step(const Dataset& batch);
  /// One shuffled pass; returns the mean step loss and accuracy.
  StepResult train_epoch(const Dataset& data, std::size_t epoch);
  /// Inference with binarized weights. Never mutates the trainer.
  EvalResult evaluate(const Dataset& data) const;

  /// Forward through W' = W - s G (s = lr or 1), backward into both hypernetworks. Needs a
  /// previous gradient, i.e. at least one completed step.
  LookaheadResult lookahead_pass(const Dataset& batch, const PassOptions& opts = {}) const;

  /// FNV-1a over every weight, hypernetwork tensor, optimizer accumulator,
  /// history entry and the iteration counter.
  std::uint64_t state_checksum() const;

 private:
  StepResult ste_step(const Dataset& batch);
  StepResult plain_fsg_step(const Dataset& batch);
  StepResult lookahead_fsg_step(const Dataset& batch);
  Tensor fast_apply(const Tensor& g, const Tensor& w_hat) const;
  void apply_base_update(const std::vector<Tensor>& registered, const ModelGrads& grads);
  void push_history(const std::vector<Tensor>& raw, const std::vector<Tensor>& composed);
  std::vector<Tensor> binarized_weights() const;
  void sync_model();

  TrainConfig cfg_;
  Model model_;
  std::vector<QuantLayerState> quant_;
  std::vector<GradientHistoryBuffer> buffers_;
  std::vector<Tensor> last_grad_;
  HyperNetBundle bundle_;
  Optimizer base_opt_;
  Optimizer hyper_opt_;
  Rng shuffle_rng_;
  std::size_t iteration_ = 0;
};

}  // namespace fsg

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fsg/tensor.hpp"

namespace fsg {

enum class LayerKind { dense, conv2d, bias, relu, flatten };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view text);

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t out = 0;     // dense: output features, conv2d: output channels
  std::size_t kernel = 3;  // conv2d only
  std::size_t stride = 1;
  std::size_t pad = 0;
  /// Unset means: binarize every weighted layer except the first and last.
  std::optional<bool> binarize;

  bool operator==(const LayerSpec&) const = default;
};

struct ModelSpec {
  Shape input{2};  // per-sample shape: {features} or {C, H, W}
  std::vector<LayerSpec> layers;

  bool operator==(const ModelSpec&) const = default;
};

struct Layer {
  LayerSpec spec;
  Shape in_shape;   // per sample
  Shape out_shape;  // per sample
  Tensor w;         // dense: out x in, conv2d: Cout x Cin x K x K
  Tensor b;         // dense: out, bias: channels
  bool quantized = false;
  std::size_t quant_slot = 0;  // index among quantized layers

  bool has_weight() const { return spec.kind == LayerKind::dense || spec.kind == LayerKind::conv2d; }
  bool has_bias() const { return spec.kind == LayerKind::dense || spec.kind == LayerKind::bias; }
};

struct ForwardCache {
  std::vector<Tensor> inputs;  // input to each layer, batch-major
  Tensor logits;
};

struct ModelGrads {
  std::vector<Tensor> w;  // per layer; empty for weightless layers
  std::vector<Tensor> b;
};

/// Sequential network. Quantized layers read their weights from a caller
/// supplied list (indexed by quant_slot) so the same model can run with
/// binarized, look-ahead or surrogate weights.
class Model {
 public:
  static Model build(const ModelSpec& spec, std::size_t classes, Rng& rng);

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  std::size_t n_quantized() const noexcept { return n_quantized_; }
  std::size_t classes() const noexcept { return classes_; }

  /// x: B x (input shape). quant_w[s] replaces the weights of quantized slot s.
  Tensor forward(const Tensor& x, const std::vector<Tensor>& quant_w, ForwardCache& cache) const;
  /// Gradients w.r.t. every layer's (effective) weight and bias.
  ModelGrads backward(const ForwardCache& cache, const Tensor& g_logits,
                      const std::vector<Tensor>& quant_w) const;

 private:
  const Tensor& weight_for(const Layer& layer, const std::vector<Tensor>& quant_w) const;

  std::vector<Layer> layers_;
  std::size_t n_quantized_ = 0;
  std::size_t classes_ = 0;
};

}  // namespace fsg

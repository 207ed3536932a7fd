#include "fsg/model.hpp"

#include <cmath>

#include "fsg/ops.hpp"

namespace fsg {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::bias: return "bias";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view text) {
  if (text == "dense") return LayerKind::dense;
  if (text == "conv2d") return LayerKind::conv2d;
  if (text == "bias") return LayerKind::bias;
  if (text == "relu") return LayerKind::relu;
  if (text == "flatten") return LayerKind::flatten;
  throw std::invalid_argument("unknown layer kind '" + std::string(text) +
                              "' (expected dense, conv2d, bias, relu or flatten)");
}

namespace {

Shape with_batch(std::size_t batch, const Shape& s) {
  Shape out{batch};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace

Model Model::build(const ModelSpec& spec, std::size_t classes, Rng& rng) {
  if (spec.layers.empty()) throw ContractError("model has no layers");
  if (spec.input.empty() || shape_numel(spec.input) == 0) throw DimensionError("model input shape is empty");
  Model m;
  m.classes_ = classes;

  std::vector<std::size_t> weighted;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto k = spec.layers[i].kind;
    if (k == LayerKind::dense || k == LayerKind::conv2d) weighted.push_back(i);
  }
  if (weighted.empty()) throw ContractError("model has no weighted layer");

  Shape cur = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    Layer layer;
    layer.spec = spec.layers[i];
    layer.in_shape = cur;
    switch (layer.spec.kind) {
      case LayerKind::dense: {
        if (cur.size() != 1) {
          throw DimensionError("layer " + std::to_string(i) + ": dense expects a flat input, got " +
                               shape_str(cur) + " (add a flatten layer)");
        }
        if (layer.spec.out == 0) throw DomainError("layer " + std::to_string(i) + ": out must be >= 1");
        const double bound = 1.0 / std::sqrt(static_cast<double>(cur[0]));
        layer.w = rand_uniform({layer.spec.out, cur[0]}, rng, -bound, bound);
        layer.b = Tensor({layer.spec.out});
        cur = {layer.spec.out};
        break;
      }
      case LayerKind::conv2d: {
        if (cur.size() != 3) {
          throw DimensionError("layer " + std::to_string(i) + ": conv2d expects C x H x W input, got " +
                               shape_str(cur));
        }
        if (layer.spec.out == 0 || layer.spec.kernel == 0) {
          throw DomainError("layer " + std::to_string(i) + ": out and kernel must be >= 1");
        }
        const std::size_t k = layer.spec.kernel;
        const double bound = 1.0 / std::sqrt(static_cast<double>(cur[0] * k * k));
        layer.w = rand_uniform({layer.spec.out, cur[0], k, k}, rng, -bound, bound);
        const std::size_t ho = conv_out_size(cur[1], k, layer.spec.stride, layer.spec.pad);
        const std::size_t wo = conv_out_size(cur[2], k, layer.spec.stride, layer.spec.pad);
        cur = {layer.spec.out, ho, wo};
        break;
      }
      case LayerKind::bias:
        layer.b = Tensor({cur[0]});
        break;
      case LayerKind::relu:
        break;
      case LayerKind::flatten:
        cur = {shape_numel(cur)};
        break;
    }
    layer.out_shape = cur;
    if (layer.has_weight()) {
      const bool edge = i == weighted.front() || i == weighted.back();
      layer.quantized = layer.spec.binarize.value_or(!edge);
      if (layer.quantized) layer.quant_slot = m.n_quantized_++;
    } else if (layer.spec.binarize.value_or(false)) {
      throw ContractError("layer " + std::to_string(i) + ": only dense and conv2d layers can be binarized");
    }
    m.layers_.push_back(std::move(layer));
  }
  if (cur.size() != 1 || cur[0] != classes) {
    throw DimensionError("model output " + shape_str(cur) + " does not match " + std::to_string(classes) +
                         " classes");
  }
  return m;
}

const Tensor& Model::weight_for(const Layer& layer, const std::vector<Tensor>& quant_w) const {
  if (!layer.quantized) return layer.w;
  if (layer.quant_slot >= quant_w.size()) {
    throw ContractError("no weights supplied for quantized slot " + std::to_string(layer.quant_slot));
  }
  const Tensor& w = quant_w[layer.quant_slot];
  if (w.shape() != layer.w.shape()) {
    throw DimensionError("quantized slot " + std::to_string(layer.quant_slot) + ": weights " +
                         shape_str(w.shape()) + " expected " + shape_str(layer.w.shape()));
  }
  return w;
}

Tensor Model::forward(const Tensor& x, const std::vector<Tensor>& quant_w, ForwardCache& cache) const {
  if (x.rank() == 0 || x.dim(0) == 0) throw ContractError("forward: empty batch");
  const std::size_t batch = x.dim(0);
  if (x.shape() != with_batch(batch, layers_.front().in_shape)) {
    throw DimensionError("forward: input " + shape_str(x.shape()) + " does not match model input " +
                         shape_str(layers_.front().in_shape));
  }
  cache.inputs.clear();
  cache.inputs.reserve(layers_.size());
  Tensor cur = x;
  for (const Layer& layer : layers_) {
    cache.inputs.push_back(cur);
    switch (layer.spec.kind) {
      case LayerKind::dense:
        cur = dense_forward(cur, weight_for(layer, quant_w), layer.b);
        break;
      case LayerKind::conv2d:
        cur = conv2d_forward(cur, weight_for(layer, quant_w), layer.spec.stride, layer.spec.pad);
        break;
      case LayerKind::bias:
        cur = bias_forward(cur, layer.b);
        break;
      case LayerKind::relu:
        cur = relu_forward(cur);
        break;
      case LayerKind::flatten:
        cur = cur.reshaped({batch, shape_numel(layer.in_shape)});
        break;
    }
  }
  cache.logits = cur;
  return cur;
}

ModelGrads Model::backward(const ForwardCache& cache, const Tensor& g_logits,
                           const std::vector<Tensor>& quant_w) const {
  if (cache.inputs.size() != layers_.size()) throw ContractError("backward: cache does not match model");
  require_same_shape(g_logits, cache.logits, "backward logits");
  ModelGrads grads;
  grads.w.resize(layers_.size());
  grads.b.resize(layers_.size());
  Tensor g = g_logits;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Layer& layer = layers_[i];
    const Tensor& in = cache.inputs[i];
    switch (layer.spec.kind) {
      case LayerKind::dense: {
        auto d = dense_backward(in, weight_for(layer, quant_w), g);
        grads.w[i] = std::move(d.w);
        grads.b[i] = std::move(d.b);
        g = std::move(d.x);
        break;
      }
      case LayerKind::conv2d: {
        auto d = conv2d_backward(in, weight_for(layer, quant_w), g, layer.spec.stride, layer.spec.pad);
        grads.w[i] = std::move(d.w);
        g = std::move(d.x);
        break;
      }
      case LayerKind::bias:
        grads.b[i] = bias_backward(g, layer.b.numel());
        break;
      case LayerKind::relu:
        g = relu_backward(in, g);
        break;
      case LayerKind::flatten:
        g = g.reshaped(in.shape());
        break;
    }
  }
  return grads;
}

}  // namespace fsg

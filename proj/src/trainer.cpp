#include "fsg/trainer.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

#include "fsg/ops.hpp"

namespace fsg {

std::string_view to_string(Method m) { return m == Method::fsg ? "fsg" : "ste"; }

Method parse_method(std::string_view text) {
  if (text == "fsg") return Method::fsg;
  if (text == "ste") return Method::ste;
  throw std::invalid_argument("unknown method '" + std::string(text) + "' (expected fsg or ste)");
}

std::string_view to_string(HistorySource h) { return h == HistorySource::raw ? "raw" : "composed"; }

HistorySource parse_history_source(std::string_view text) {
  if (text == "raw") return HistorySource::raw;
  if (text == "composed") return HistorySource::composed;
  throw std::invalid_argument("unknown history_source '" + std::string(text) + "' (expected raw or composed)");
}

std::string_view to_string(LookaheadStep s) { return s == LookaheadStep::lr ? "lr" : "unit"; }

LookaheadStep parse_lookahead_step(std::string_view text) {
  if (text == "lr") return LookaheadStep::lr;
  if (text == "unit") return LookaheadStep::unit;
  throw std::invalid_argument("unknown lookahead '" + std::string(text) + "' (expected lr or unit)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& rule) {
    throw std::invalid_argument("invalid " + field + ": " + rule);
  };
  if (l < 1) fail("l", "must be >= 1");
  if (!(lr > 0.0)) fail("lr", "must be > 0");
  if (!(hyper_lr > 0.0)) fail("hyper_lr", "must be > 0");
  if (!(beta >= 0.0 && beta <= 1.0)) fail("beta", "must be in [0, 1]");
  if (!std::isfinite(alpha)) fail("alpha", "must be finite");
  if (bits < 1 || bits > 30) fail("bits", "must be in [1, 30]");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (lr_decay_every < 1) fail("lr_decay_every", "must be >= 1");
  if (!(lr_decay_factor > 0.0)) fail("lr_decay_factor", "must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum", "must be in [0, 1)");
  if (hyper.fast_hidden < 1) fail("fast_hidden", "must be >= 1");
  if (hyper.d < 1) fail("d", "must be >= 1");
  if (hyper.state_dim < 1) fail("state_dim", "must be >= 1");
  if (hyper.expand < 1) fail("expand", "must be >= 1");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  return lr * std::pow(lr_decay_factor, static_cast<double>(epoch / lr_decay_every));
}

Tensor compose_gradient(const Tensor& g_fast, const Tensor* g_slow, const Tensor& da_dw, double alpha,
                        double beta) {
  require_same_shape(g_fast, da_dw, "compose_gradient");
  if (g_slow) require_same_shape(g_fast, *g_slow, "compose_gradient slow term");
  Tensor out = zeros_like(g_fast);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = alpha * (g_fast[i] * da_dw[i]);
    if (g_slow) out[i] -= beta * (*g_slow)[i];
  }
  return out;
}

Trainer::Trainer(TrainConfig cfg, Model model)
    : cfg_(std::move(cfg)), model_(std::move(model)), shuffle_rng_(Rng(cfg_.seed).split(11)) {
  cfg_.validate();
  for (const Layer& layer : model_.layers()) {
    if (!layer.quantized) continue;
    quant_.emplace_back(quant_.size(), layer.w, cfg_.bits);
    buffers_.emplace_back(layer.quant_slot, cfg_.l, layer.w.numel());
  }
  last_grad_.resize(quant_.size());
  Rng hyper_rng = Rng(cfg_.seed).split(12);
  bundle_ = HyperNetBundle::create(cfg_.hyper, std::max<std::size_t>(quant_.size(), 1), hyper_rng);
  base_opt_ = Optimizer(cfg_.optimizer, cfg_.lr, cfg_.optimizer == OptimizerKind::sgd ? cfg_.momentum : 0.0,
                        cfg_.adam);
  hyper_opt_ = Optimizer(OptimizerKind::adam, cfg_.hyper_lr);
}

std::vector<Tensor> Trainer::binarized_weights() const {
  std::vector<Tensor> out;
  out.reserve(quant_.size());
  for (const auto& q : quant_) out.push_back(q.w_b);
  return out;
}

void Trainer::sync_model() {
  for (Layer& layer : model_.layers())
    if (layer.quantized) layer.w = quant_[layer.quant_slot].w;
}

double Trainer::lookahead_scale() const noexcept {
  return cfg_.lookahead == LookaheadStep::lr ? base_opt_.lr() : 1.0;
}

Tensor Trainer::fast_apply(const Tensor& g, const Tensor& w_hat) const {
  switch (bundle_.fast_kind) {
    case FastKind::mlp: return fast_forward(g, w_hat, bundle_.fast);
    case FastKind::identity: return g;
    case FastKind::off: return zeros_like(g);
  }
  return g;
}

void Trainer::apply_base_update(const std::vector<Tensor>& registered, const ModelGrads& grads) {
  const std::size_t nq = quant_.size();
  for (std::size_t s = 0; s < nq; ++s) {
    quant_[s].registered_grad = registered[s];
    base_opt_.step(s, quant_[s].w, registered[s]);
    quant_[s].refresh();
  }
  auto& layers = model_.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Layer& layer = layers[i];
    if (layer.has_weight() && !layer.quantized) base_opt_.step(nq + 2 * i, layer.w, grads.w[i]);
    if (layer.has_bias()) base_opt_.step(nq + 2 * i + 1, layer.b, grads.b[i]);
  }
  sync_model();
}

void Trainer::push_history(const std::vector<Tensor>& raw, const std::vector<Tensor>& composed) {
  const auto& src = cfg_.history_source == HistorySource::raw ? raw : composed;
  for (std::size_t s = 0; s < quant_.size(); ++s) {
    buffers_[s].push(src[s]);
    last_grad_[s] = raw[s];
  }
}

namespace {

void check_loss(double loss, std::size_t iteration) {
  if (!std::isfinite(loss)) throw DivergenceError(iteration, "non-finite loss");
}

}  // namespace

StepResult Trainer::train_step(const Dataset& batch) {
  if (batch.size() == 0) throw ContractError("train_step: empty batch");
  ++iteration_;
  if (cfg_.method == Method::ste) return ste_step(batch);
  if (iteration_ == 1 || !bundle_.has_trainable() || quant_.empty()) return plain_fsg_step(batch);
  return lookahead_fsg_step(batch);
}

StepResult Trainer::ste_step(const Dataset& batch) {
  const auto wb = binarized_weights();
  ForwardCache cache;
  const Tensor logits = model_.forward(batch.x, wb, cache);
  const auto xent = softmax_xent_forward(logits, batch.labels);
  check_loss(xent.loss, iteration_);
  const ModelGrads grads = model_.backward(cache, softmax_xent_backward(xent, batch.labels), wb);

  std::vector<Tensor> g_b(quant_.size()), registered(quant_.size());
  for (const Layer& layer : model_.layers()) {
    if (!layer.quantized) continue;
    const std::size_t s = layer.quant_slot;
    g_b[s] = grads.w[&layer - model_.layers().data()];
    registered[s] = hadamard(ste_backward(g_b[s]), quant_[s].da_dw);
  }
  apply_base_update(registered, grads);
  return {xent.loss, xent.correct, batch.size(), true};
}

StepResult Trainer::plain_fsg_step(const Dataset& batch) {
  const auto wb = binarized_weights();
  ForwardCache cache;
  const Tensor logits = model_.forward(batch.x, wb, cache);
  const auto xent = softmax_xent_forward(logits, batch.labels);
  check_loss(xent.loss, iteration_);
  const ModelGrads grads = model_.backward(cache, softmax_xent_backward(xent, batch.labels), wb);

  std::vector<Tensor> g_b(quant_.size()), registered(quant_.size());
  for (std::size_t i = 0; i < model_.layers().size(); ++i) {
    const Layer& layer = model_.layers()[i];
    if (layer.quantized) g_b[layer.quant_slot] = grads.w[i];
  }
  const bool first = iteration_ == 1;
  for (std::size_t s = 0; s < quant_.size(); ++s) {
    registered[s] = first ? hadamard(g_b[s], quant_[s].da_dw)
                          : compose_gradient(fast_apply(g_b[s], quant_[s].w_hat), nullptr,
                                             quant_[s].da_dw, cfg_.alpha, cfg_.beta);
  }
  if (!first) apply_base_update(registered, grads);
  push_history(g_b, registered);
  return {xent.loss, xent.correct, batch.size(), !first};
}

LookaheadResult Trainer::lookahead_pass(const Dataset& batch, const PassOptions& opts) const {
  const std::size_t nq = quant_.size();
  for (std::size_t s = 0; s < nq; ++s) {
    if (last_grad_[s].empty()) throw ContractError("lookahead_pass: no previous gradient (run one step first)");
  }
  if (!opts.frozen_scales.empty() && opts.frozen_scales.size() != nq) {
    throw DimensionError("lookahead_pass: expected " + std::to_string(nq) + " frozen scales");
  }
  const bool slow_on = bundle_.slow_kind != SlowKind::off;
  const double step = lookahead_scale();

  LookaheadResult res;
  res.hyper_grads = bundle_.zeros_like();
  res.g_b.resize(nq);
  res.slow_out.resize(nq);
  res.scales.resize(nq);

  std::vector<Tensor> fast_out(nq), w_prime(nq), da_prime(nq), eff(nq);
  std::vector<std::optional<SlowCache>> slow_cache(nq);
  for (std::size_t s = 0; s < nq; ++s) {
    const QuantLayerState& q = quant_[s];
    fast_out[s] = fast_apply(last_grad_[s], q.w_hat);
    const Tensor* slow = nullptr;
    if (slow_on && !buffers_[s].empty()) {
      auto out = slow_forward(s, buffers_[s].window(), q.w.shape(), bundle_);
      res.slow_out[s] = std::move(out.grad);
      slow_cache[s] = std::move(out.cache);
      slow = &res.slow_out[s];
    }
    const Tensor G = compose_gradient(fast_out[s], slow, q.da_dw, cfg_.alpha, cfg_.beta);
    w_prime[s] = q.w;
    axpy(-step, G, w_prime[s]);
    if (!w_prime[s].all_finite()) throw DivergenceError(iteration_, "non-finite look-ahead weights");
    std::optional<double> frozen;
    if (!opts.frozen_scales.empty()) frozen = opts.frozen_scales[s];
    auto pre = preprocess(w_prime[s], frozen);
    res.scales[s] = pre.scale;
    da_prime[s] = std::move(pre.da_dw);
    eff[s] = opts.identity_quantizer ? pre.w_hat : quantize(pre.w_hat, q.bits);
  }

  ForwardCache cache;
  const Tensor logits = model_.forward(batch.x, eff, cache);
  const auto xent = softmax_xent_forward(logits, batch.labels);
  res.loss = xent.loss;
  res.correct = xent.correct;
  check_loss(xent.loss, iteration_);
  res.model_grads = model_.backward(cache, softmax_xent_backward(xent, batch.labels), eff);

  for (std::size_t i = 0; i < model_.layers().size(); ++i) {
    const Layer& layer = model_.layers()[i];
    if (layer.quantized) res.g_b[layer.quant_slot] = res.model_grads.w[i];
  }
  for (std::size_t s = 0; s < nq; ++s) {
    const QuantLayerState& q = quant_[s];
    // W' = W - s G, so dloss/dG = -s dloss/dW'.
    const Tensor g_wprime = scale(hadamard(ste_backward(res.g_b[s]), da_prime[s]), step);
    if (bundle_.fast_kind == FastKind::mlp) {
      Tensor cot = zeros_like(g_wprime);
      for (std::size_t j = 0; j < cot.numel(); ++j) cot[j] = -cfg_.alpha * q.da_dw[j] * g_wprime[j];
      auto fb = fast_backward(last_grad_[s], q.w_hat, bundle_.fast, cot);
      FastNetParams& acc = res.hyper_grads.fast;
      add_inplace(acc.m1, fb.params.m1);
      add_inplace(acc.b1, fb.params.b1);
      add_inplace(acc.m2, fb.params.m2);
      add_inplace(acc.b2, fb.params.b2);
      add_inplace(acc.m3, fb.params.m3);
      add_inplace(acc.b3, fb.params.b3);
    }
    if (slow_cache[s]) slow_backward(*slow_cache[s], bundle_, scale(g_wprime, cfg_.beta), res.hyper_grads);
  }
  return res;
}

StepResult Trainer::lookahead_fsg_step(const Dataset& batch) {
  const LookaheadResult la = lookahead_pass(batch);
  const std::size_t nq = quant_.size();

  std::vector<Tensor> registered(nq);
  for (std::size_t s = 0; s < nq; ++s) {
    const QuantLayerState& q = quant_[s];
    const Tensor fresh = fast_apply(la.g_b[s], q.w_hat);
    registered[s] = compose_gradient(fresh, la.slow_out[s].empty() ? nullptr : &la.slow_out[s], q.da_dw,
                                     cfg_.alpha, cfg_.beta);
  }

  std::size_t slot = 0;
  std::vector<const Tensor*> grads;
  la.hyper_grads.visit([&](const char*, const Tensor& t) { grads.push_back(&t); });
  bundle_.visit([&](const char*, Tensor& t) {
    hyper_opt_.step(slot, t, *grads[slot]);
    ++slot;
  });

  apply_base_update(registered, la.model_grads);
  push_history(la.g_b, registered);
  return {la.loss, la.correct, batch.size(), true};
}

StepResult Trainer::train_epoch(const Dataset& data, std::size_t epoch) {
  if (data.size() == 0) throw ContractError("train_epoch: empty dataset");
  base_opt_.set_lr(cfg_.lr_at(epoch));
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  shuffle_rng_.shuffle(idx);
  StepResult total;
  double loss_sum = 0.0;
  for (std::size_t begin = 0; begin < idx.size(); begin += cfg_.batch_size) {
    const std::size_t end = std::min(idx.size(), begin + cfg_.batch_size);
    const StepResult r = train_step(data.slice(idx, begin, end));
    loss_sum += r.loss * static_cast<double>(r.count);
    total.correct += r.correct;
    total.count += r.count;
  }
  total.loss = loss_sum / static_cast<double>(total.count);
  total.updated = true;
  return total;
}

EvalResult Trainer::evaluate(const Dataset& data) const {
  if (data.size() == 0) throw ContractError("evaluate: empty dataset");
  const auto wb = binarized_weights();
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  constexpr std::size_t chunk = 1024;
  EvalResult res;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < idx.size(); begin += chunk) {
    const std::size_t end = std::min(idx.size(), begin + chunk);
    const Dataset part = data.slice(idx, begin, end);
    ForwardCache cache;
    const Tensor logits = model_.forward(part.x, wb, cache);
    const auto xent = softmax_xent_forward(logits, part.labels);
    loss_sum += xent.loss * static_cast<double>(part.size());
    correct += xent.correct;
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < part.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (logits.at(r, c) > logits.at(r, best)) best = c;
      res.predictions.push_back(static_cast<int>(best));
    }
  }
  res.loss = loss_sum / static_cast<double>(data.size());
  res.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return res;
}

namespace {

struct Fnv1a {
  std::uint64_t h = 14695981039346656037ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  }
  void tensor(const Tensor& t) {
    for (auto d : t.shape()) bytes(&d, sizeof d);
    for (double v : t.data()) bytes(&v, sizeof v);
  }
};

}  // namespace

std::uint64_t Trainer::state_checksum() const {
  Fnv1a f;
  for (const Layer& layer : model_.layers()) {
    f.tensor(layer.w);
    f.tensor(layer.b);
  }
  for (const auto& q : quant_) {
    f.tensor(q.w);
    f.tensor(q.registered_grad);
  }
  bundle_.visit([&](const char*, const Tensor& t) { f.tensor(t); });
  for (const Tensor* t : base_opt_.state_tensors()) f.tensor(*t);
  for (const Tensor* t : hyper_opt_.state_tensors()) f.tensor(*t);
  for (const auto& b : buffers_)
    for (const auto& e : b.entries()) f.bytes(e.data(), e.size() * sizeof(double));
  for (const auto& g : last_grad_) f.tensor(g);
  f.bytes(&iteration_, sizeof iteration_);
  return f.h;
}

}  // namespace fsg

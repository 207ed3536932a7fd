#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "fsg/tensor.hpp"

namespace fsg {

enum class FastKind { mlp, identity, off };
enum class SlowKind { ssm, lstm, off };

std::string_view to_string(FastKind kind);
std::string_view to_string(SlowKind kind);
FastKind parse_fast_kind(std::string_view text);
SlowKind parse_slow_kind(std::string_view text);

// ---------------------------------------------------------------------------
// Fast-net: a shared linear stack 2 -> H -> H -> 1 applied to every
// (gradient, preprocessed weight) pair of a layer. No activations.

struct FastNetParams {
  Tensor m1;  // 2 x H
  Tensor b1;  // H
  Tensor m2;  // H x H
  Tensor b2;  // H
  Tensor m3;  // H x 1
  Tensor b3;  // 1

  /// Semi-orthogonal matrices, zero biases.
  static FastNetParams init(std::size_t hidden, Rng& rng);
  static FastNetParams zeros(std::size_t hidden);
  std::size_t hidden() const { return m2.dim(0); }

  template <typename F>
  void visit(F&& f) {
    f("fast.m1", m1); f("fast.b1", b1); f("fast.m2", m2);
    f("fast.b2", b2); f("fast.m3", m3); f("fast.b3", b3);
  }
  template <typename F>
  void visit(F&& f) const {
    f("fast.m1", m1); f("fast.b1", b1); f("fast.m2", m2);
    f("fast.b2", b2); f("fast.m3", m3); f("fast.b3", b3);
  }
};

/// Output has g's shape.
Tensor fast_forward(const Tensor& g, const Tensor& w_hat, const FastNetParams& p);

struct FastNetGrads {
  FastNetParams params;
  Tensor g;
  Tensor w_hat;
};

FastNetGrads fast_backward(const Tensor& g, const Tensor& w_hat, const FastNetParams& p,
                           const Tensor& cotangent);

// ---------------------------------------------------------------------------
// Diagonal state-space primitives (single input, single output).

struct ZohResult {
  Tensor a_bar;  // N (diagonal)
  Tensor b_bar;  // N x P
};

/// Zero-order hold for a diagonal A (given as its N diagonal entries) and an
/// (N x P) input matrix B. Uses B_bar = delta * B on channels where
/// |delta * a| < 1e-8. Throws DomainError for delta <= 0.
ZohResult ssm_discretize(const Tensor& a_diag, const Tensor& b, double delta);

/// h_t = A_bar_t h_{t-1} + B_bar_t x_t, y_t = C_t . h_t, with h_{-1} = 0.
///
/// a_bar, b_bar and c are (T x N) for per-step parameters or (1 x N) for
/// time-invariant ones; x has T entries.
Tensor ssm_scan(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c, const Tensor& x);

/// K_j = C . (A_bar^j B_bar) for j < length. Time-invariant parameters only.
Tensor ssm_kernel(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c, std::size_t length);

/// Causal convolution of x with ssm_kernel; throws ContractError when any
/// parameter has more than one row.
Tensor ssm_conv(const Tensor& a_bar, const Tensor& b_bar, const Tensor& c, const Tensor& x);

// ---------------------------------------------------------------------------
// Slow-net.

/// Selective SSM block: in-projection to d_inner = expand * d with a parallel
/// gate branch, input-dependent (B, C, delta), diagonal scan, SiLU gate,
/// out-projection and a residual connection.
struct SsmParams {
  Tensor w_in;     // D x d
  Tensor b_in;     // D
  Tensor w_z;      // D x d
  Tensor b_z;      // D
  Tensor s_b;      // N x D
  Tensor bias_b;   // N
  Tensor s_c;      // N x D
  Tensor bias_c;   // N
  Tensor s_dt;     // 1 x D
  Tensor bias_dt;  // 1
  Tensor a_log;    // D x N, A = -exp(a_log)
  Tensor w_out;    // d x D
  Tensor b_out;    // d

  static SsmParams init(std::size_t d, std::size_t expand, std::size_t state, Rng& rng);
  static SsmParams zeros(std::size_t d, std::size_t expand, std::size_t state);
  std::size_t d() const { return w_in.dim(1); }
  std::size_t d_inner() const { return w_in.dim(0); }
  std::size_t state() const { return a_log.dim(1); }

  template <typename F>
  void visit(F&& f) {
    f("ssm.w_in", w_in); f("ssm.b_in", b_in); f("ssm.w_z", w_z); f("ssm.b_z", b_z);
    f("ssm.s_b", s_b); f("ssm.bias_b", bias_b); f("ssm.s_c", s_c); f("ssm.bias_c", bias_c);
    f("ssm.s_dt", s_dt); f("ssm.bias_dt", bias_dt); f("ssm.a_log", a_log);
    f("ssm.w_out", w_out); f("ssm.b_out", b_out);
  }
  template <typename F>
  void visit(F&& f) const {
    f("ssm.w_in", w_in); f("ssm.b_in", b_in); f("ssm.w_z", w_z); f("ssm.b_z", b_z);
    f("ssm.s_b", s_b); f("ssm.bias_b", bias_b); f("ssm.s_c", s_c); f("ssm.bias_c", bias_c);
    f("ssm.s_dt", s_dt); f("ssm.bias_dt", bias_dt); f("ssm.a_log", a_log);
    f("ssm.w_out", w_out); f("ssm.b_out", b_out);
  }
};

struct SelectiveParams {
  Tensor b;          // L x N
  Tensor c;          // L x N
  Tensor delta_pre;  // L, before softplus
  Tensor delta;      // L, broadcast over all D channels
};

/// (B_t, C_t, delta_t) from in-projected tokens (L x D).
SelectiveParams selective_params(const Tensor& tokens, const SsmParams& p);

/// Single-layer LSTM with hidden size d, gate order (i, f, g, o).
struct LstmParams {
  Tensor w_x;  // 4d x d
  Tensor w_h;  // 4d x d
  Tensor b;    // 4d

  static LstmParams init(std::size_t d, Rng& rng);
  static LstmParams zeros(std::size_t d);
  std::size_t d() const { return w_x.dim(1); }

  template <typename F>
  void visit(F&& f) {
    f("lstm.w_x", w_x); f("lstm.w_h", w_h); f("lstm.b", b);
  }
  template <typename F>
  void visit(F&& f) const {
    f("lstm.w_x", w_x); f("lstm.w_h", w_h); f("lstm.b", b);
  }
};

struct HyperNetConfig {
  FastKind fast_kind = FastKind::mlp;
  SlowKind slow_kind = SlowKind::ssm;
  std::size_t fast_hidden = 100;
  std::size_t d = 16;
  std::size_t state_dim = 8;
  std::size_t expand = 2;

  bool operator==(const HyperNetConfig&) const = default;
};

/// Both gradient generators plus the layer embedding table and the token
/// and head projections. One bundle serves every binarized layer.
struct HyperNetBundle {
  FastKind fast_kind = FastKind::mlp;
  SlowKind slow_kind = SlowKind::ssm;
  FastNetParams fast;
  SsmParams ssm;
  LstmParams lstm;
  Tensor lre;         // n_layers x d
  Tensor token_proj;  // 1 x d
  Tensor head_proj;   // d x 1

  static HyperNetBundle create(const HyperNetConfig& cfg, std::size_t n_layers, Rng& rng);
  /// Same structure, every tensor zero. Used as a gradient accumulator.
  HyperNetBundle zeros_like() const;

  std::size_t n_layers() const { return lre.dim(0); }
  std::size_t d() const { return lre.dim(1); }
  bool has_trainable() const {
    return fast_kind == FastKind::mlp || slow_kind != SlowKind::off;
  }

  /// Visits the trainable tensors of the active components in a fixed order.
  template <typename F>
  void visit(F&& f) {
    if (fast_kind == FastKind::mlp) fast.visit(f);
    if (slow_kind == SlowKind::ssm) ssm.visit(f);
    if (slow_kind == SlowKind::lstm) lstm.visit(f);
    if (slow_kind != SlowKind::off) {
      f("lre", lre); f("token_proj", token_proj); f("head_proj", head_proj);
    }
  }
  template <typename F>
  void visit(F&& f) const {
    if (fast_kind == FastKind::mlp) fast.visit(f);
    if (slow_kind == SlowKind::ssm) ssm.visit(f);
    if (slow_kind == SlowKind::lstm) lstm.visit(f);
    if (slow_kind != SlowKind::off) {
      f("lre", lre); f("token_proj", token_proj); f("head_proj", head_proj);
    }
  }
};

/// Everything slow_backward needs from a forward pass.
struct SlowCache {
  SlowKind kind = SlowKind::off;
  std::size_t layer_index = 0;
  std::size_t xi = 0;
  std::size_t length = 0;  // xi * m + 1 tokens
  Shape grad_shape;
  std::vector<double> history;
  Tensor tokens;  // L x d
  Tensor tail;    // last xi rows of the block output, xi x d
  // selective SSM
  Tensor x, z, y;
  SelectiveParams sel;
  std::vector<double> states, a_bar, phi;  // L x D x N each
  // LSTM
  Tensor gates;  // L x 4d, post-activation
  Tensor cell;   // L x d
  Tensor hidden; // L x d
};

struct SlowOutput {
  Tensor grad;  // requesting layer's gradient shape
  SlowCache cache;
};

/// Token sequence [lre[layer]; history_j * token_proj] of length xi*m + 1,
/// run through the bundle's slow kind, last xi outputs projected by
/// head_proj and reshaped to grad_shape.
///
/// Throws EmptyHistoryError for an empty history, std::out_of_range for a
/// bad layer index, DimensionError when the history is not a whole number
/// of gradients.
SlowOutput slow_forward(std::size_t layer_index, const Tensor& history, const Shape& grad_shape,
                        const HyperNetBundle& bundle);

/// Accumulates d(cotangent . output)/d(parameters) into `grads`.
void slow_backward(const SlowCache& cache, const HyperNetBundle& bundle, const Tensor& cotangent,
                   HyperNetBundle& grads);

// ---------------------------------------------------------------------------
// Checkpoints.

/// Ordered name -> tensor container with a bit-exact binary form:
///
///   "FSGPARAM" | u32 version=1 | u64 count |
///   count x ( u32 name_len | name bytes | u32 rank | rank x u64 dim |
///             numel x f64 )
///
/// All integers and doubles are little-endian; doubles are raw IEEE-754.
class ParamArchive {
 public:
  void put(std::string name, Tensor value);
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void save(const std::string& path) const;
  static ParamArchive load(const std::string& path);

  bool operator==(const ParamArchive& other) const = default;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

void store_bundle(const HyperNetBundle& bundle, ParamArchive& archive,
                  const std::string& prefix = "hyper.");
void restore_bundle(HyperNetBundle& bundle, const ParamArchive& archive,
                    const std::string& prefix = "hyper.");

}  // namespace fsg

#include "fsg/config.hpp"

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace fsg {

ConfigError::ConfigError(const std::string& what, std::size_t line, std::size_t column)
    : std::runtime_error(line ? what + " (line " + std::to_string(line) + ", column " + std::to_string(column) + ")"
                              : what),
      line_(line),
      column_(column) {}

bool ConvergenceSpec::operator==(const ConvergenceSpec& o) const {
  const auto& a = bench;
  const auto& b = o.bench;
  return problem == o.problem && dim == o.dim && n == o.n && curvature == o.curvature && delta == o.delta &&
         lambda == o.lambda && seeds == o.seeds && seed == o.seed && a.c == b.c && a.beta == b.beta &&
         a.horizon == b.horizon && a.repeats == b.repeats && a.omega == b.omega && a.theta == b.theta &&
         a.slow_noise == b.slow_noise && a.x0_distance == b.x0_distance && a.per_step_alpha == b.per_step_alpha;
}

ModelSpec RunConfig::default_model() {
  auto layer = [](LayerKind kind, std::size_t out) {
    LayerSpec s;
    s.kind = kind;
    s.out = out;
    return s;
  };
  ModelSpec m;
  m.input = {2};
  m.layers = {layer(LayerKind::dense, 32), layer(LayerKind::relu, 0), layer(LayerKind::dense, 32),
              layer(LayerKind::relu, 0), layer(LayerKind::dense, 2)};
  return m;
}

void RunConfig::validate() const {
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  if (data.kind != DataKind::idx) {
    if (data.n_per_class < 1) throw ConfigError("invalid data.n_per_class: must be >= 1");
    if (data.classes < 2) throw ConfigError("invalid data.classes: must be >= 2");
    if (data.noise < 0) throw ConfigError("invalid data.noise: must be >= 0");
    if (data.kind == DataKind::spirals && data.classes != 2) throw ConfigError("invalid data.classes: spirals have 2");
  } else if (data.images.empty() || data.labels.empty()) {
    throw ConfigError("invalid data.images/data.labels: idx data needs both paths");
  }
  if (model.layers.empty()) throw ConfigError("invalid model.layers: at least one layer required");
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if ((l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) && l.out == 0) {
      throw ConfigError("invalid model.layers[" + std::to_string(i) + "].out: must be >= 1");
    }
    if (l.kind == LayerKind::conv2d && (l.kernel == 0 || l.stride == 0)) {
      throw ConfigError("invalid model.layers[" + std::to_string(i) + "]: kernel and stride must be >= 1");
    }
  }
  const auto& c = convergence;
  if (c.dim < 1) throw ConfigError("invalid convergence.dim: must be >= 1");
  if (c.n < 1) throw ConfigError("invalid convergence.n: must be >= 1");
  if (!(c.bench.c > 0)) throw ConfigError("invalid convergence.c: must be > 0");
  if (!(c.bench.beta >= 0 && c.bench.beta < 1)) throw ConfigError("invalid convergence.beta: must be in [0, 1)");
  if (c.bench.horizon < 1) throw ConfigError("invalid convergence.horizon: must be >= 1");
  if (c.bench.repeats < 1) throw ConfigError("invalid convergence.repeats: must be >= 1");
  if (c.seeds < 1) throw ConfigError("invalid convergence.seeds: must be >= 1");
  if (!(c.bench.omega > 0 && c.bench.theta >= c.bench.omega)) {
    throw ConfigError("invalid convergence.omega/theta: need 0 < omega <= theta");
  }
  if (output_dir.empty()) throw ConfigError("invalid output_dir: must not be empty");
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

namespace {

using Keys = std::set<std::string>;

[[noreturn]] void fail_at(const YAML::Node& node, const std::string& msg) {
  const auto m = node.Mark();
  if (m.line >= 0) throw ConfigError(msg, static_cast<std::size_t>(m.line) + 1, static_cast<std::size_t>(m.column) + 1);
  throw ConfigError(msg);
}

void require_map(const YAML::Node& node, const std::string& path, const Keys& allowed) {
  if (!node.IsMap()) fail_at(node, path + " must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) fail_at(kv.first, "unknown key '" + (path.empty() ? key : path + "." + key) + "'");
  }
}

template <typename T>
void read(const YAML::Node& map, const char* key, const std::string& path, T& out) {
  const YAML::Node n = map[key];
  if (!n) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      out = n.as<bool>();
    } else if constexpr (std::is_unsigned_v<T>) {
      const auto s = n.as<std::string>();
      if (!s.empty() && s[0] == '-') fail_at(n, "invalid " + path + "." + key + ": must be >= 0");
      out = n.as<T>();
    } else {
      out = n.as<T>();
    }
  } catch (const YAML::Exception&) {
    fail_at(n, "invalid " + path + "." + key + ": cannot parse '" + n.Scalar() + "'");
  }
}

template <typename Parse, typename T>
void read_enum(const YAML::Node& map, const char* key, const std::string& path, T& out, Parse parse) {
  const YAML::Node n = map[key];
  if (!n) return;
  try {
    out = parse(n.as<std::string>());
  } catch (const std::invalid_argument& e) {
    fail_at(n, "invalid " + path + "." + key + ": " + e.what());
  }
}

DataKind parse_data_kind(std::string_view s) {
  if (s == "blobs") return DataKind::blobs;
  if (s == "spirals") return DataKind::spirals;
  if (s == "idx") return DataKind::idx;
  throw std::invalid_argument("expected blobs, spirals or idx");
}

const char* data_kind_name(DataKind k) {
  return k == DataKind::blobs ? "blobs" : k == DataKind::spirals ? "spirals" : "idx";
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("config parse error: " + e.msg, static_cast<std::size_t>(e.mark.line) + 1,
                      static_cast<std::size_t>(e.mark.column) + 1);
  }
  RunConfig cfg;
  if (root.IsNull()) {
    cfg.validate();
    return cfg;
  }
  require_map(root, "", {"train", "hypernet", "data", "model", "convergence", "output_dir"});

  if (const auto t = root["train"]) {
    require_map(t, "train",
                {"method", "alpha", "beta", "l", "bits", "optimizer", "lr", "momentum", "adam_beta1", "adam_beta2",
                 "adam_eps", "hyper_lr", "epochs", "batch_size", "lr_decay", "seed", "history_source",
                 "lookahead", "record_wall_time"});
    auto& tc = cfg.train;
    read_enum(t, "method", "train", tc.method, parse_method);
    read(t, "alpha", "train", tc.alpha);
    read(t, "beta", "train", tc.beta);
    read(t, "l", "train", tc.l);
    read(t, "bits", "train", tc.bits);
    read_enum(t, "optimizer", "train", tc.optimizer, parse_optimizer_kind);
    read(t, "lr", "train", tc.lr);
    read(t, "momentum", "train", tc.momentum);
    read(t, "adam_beta1", "train", tc.adam.beta1);
    read(t, "adam_beta2", "train", tc.adam.beta2);
    read(t, "adam_eps", "train", tc.adam.eps);
    read(t, "hyper_lr", "train", tc.hyper_lr);
    read(t, "epochs", "train", tc.epochs);
    read(t, "batch_size", "train", tc.batch_size);
    read(t, "seed", "train", tc.seed);
    read_enum(t, "history_source", "train", tc.history_source, parse_history_source);
    read_enum(t, "lookahead", "train", tc.lookahead, parse_lookahead_step);
    read(t, "record_wall_time", "train", cfg.record_wall_time);
    if (const auto d = t["lr_decay"]) {
      require_map(d, "train.lr_decay", {"every", "factor"});
      read(d, "every", "train.lr_decay", tc.lr_decay_every);
      read(d, "factor", "train.lr_decay", tc.lr_decay_factor);
    }
  }
  if (const auto h = root["hypernet"]) {
    require_map(h, "hypernet", {"fast_kind", "slow_kind", "fast_hidden", "d", "state_dim", "expand"});
    auto& hc = cfg.train.hyper;
    read_enum(h, "fast_kind", "hypernet", hc.fast_kind, parse_fast_kind);
    read_enum(h, "slow_kind", "hypernet", hc.slow_kind, parse_slow_kind);
    read(h, "fast_hidden", "hypernet", hc.fast_hidden);
    read(h, "d", "hypernet", hc.d);
    read(h, "state_dim", "hypernet", hc.state_dim);
    read(h, "expand", "hypernet", hc.expand);
  }
  if (const auto d = root["data"]) {
    require_map(d, "data", {"kind", "n_per_class", "noise", "classes", "test_per_class", "images", "labels",
                            "test_images", "test_labels"});
    auto& dc = cfg.data;
    read_enum(d, "kind", "data", dc.kind, parse_data_kind);
    read(d, "n_per_class", "data", dc.n_per_class);
    read(d, "noise", "data", dc.noise);
    read(d, "classes", "data", dc.classes);
    read(d, "test_per_class", "data", dc.test_per_class);
    read(d, "images", "data", dc.images);
    read(d, "labels", "data", dc.labels);
    read(d, "test_images", "data", dc.test_images);
    read(d, "test_labels", "data", dc.test_labels);
  }
  if (const auto m = root["model"]) {
    require_map(m, "model", {"input", "layers"});
    if (const auto in = m["input"]) {
      if (!in.IsSequence() || in.size() == 0) fail_at(in, "invalid model.input: must be a non-empty list");
      cfg.model.input.clear();
      for (const auto& v : in) {
        try {
          cfg.model.input.push_back(v.as<std::size_t>());
        } catch (const YAML::Exception&) {
          fail_at(v, "invalid model.input: entries must be positive integers");
        }
      }
    }
    if (const auto ls = m["layers"]) {
      if (!ls.IsSequence()) fail_at(ls, "invalid model.layers: must be a list");
      cfg.model.layers.clear();
      for (std::size_t i = 0; i < ls.size(); ++i) {
        const auto node = ls[i];
        const std::string path = "model.layers[" + std::to_string(i) + "]";
        require_map(node, path, {"kind", "out", "kernel", "stride", "pad", "binarize"});
        if (!node["kind"]) fail_at(node, "invalid " + path + ": missing kind");
        LayerSpec spec;
        read_enum(node, "kind", path, spec.kind, parse_layer_kind);
        read(node, "out", path, spec.out);
        read(node, "kernel", path, spec.kernel);
        read(node, "stride", path, spec.stride);
        read(node, "pad", path, spec.pad);
        if (node["binarize"]) {
          bool b = false;
          read(node, "binarize", path, b);
          spec.binarize = b;
        }
        cfg.model.layers.push_back(spec);
      }
    }
  }
  if (const auto c = root["convergence"]) {
    require_map(c, "convergence", {"problem", "dim", "n", "curvature", "delta", "lambda", "seeds", "seed", "c",
                                   "beta", "horizon", "repeats", "omega", "theta", "slow_noise", "x0_distance",
                                   "per_step_alpha"});
    auto& cc = cfg.convergence;
    read_enum(c, "problem", "convergence", cc.problem, parse_problem_kind);
    read(c, "dim", "convergence", cc.dim);
    read(c, "n", "convergence", cc.n);
    read(c, "curvature", "convergence", cc.curvature);
    read(c, "delta", "convergence", cc.delta);
    read(c, "lambda", "convergence", cc.lambda);
    read(c, "seeds", "convergence", cc.seeds);
    read(c, "seed", "convergence", cc.seed);
    read(c, "c", "convergence", cc.bench.c);
    read(c, "beta", "convergence", cc.bench.beta);
    read(c, "horizon", "convergence", cc.bench.horizon);
    read(c, "repeats", "convergence", cc.bench.repeats);
    read(c, "omega", "convergence", cc.bench.omega);
    read(c, "theta", "convergence", cc.bench.theta);
    read(c, "slow_noise", "convergence", cc.bench.slow_noise);
    read(c, "x0_distance", "convergence", cc.bench.x0_distance);
    read(c, "per_step_alpha", "convergence", cc.bench.per_step_alpha);
  }
  read(root, "output_dir", "", cfg.output_dir);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

namespace {

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

std::string to_yaml(const RunConfig& cfg) {
  std::ostringstream o;
  const auto& t = cfg.train;
  const auto b = [](bool v) { return v ? "true" : "false"; };
  o << "train:\n"
    << "  method: " << to_string(t.method) << "\n"
    << "  alpha: " << format_double(t.alpha) << "\n"
    << "  beta: " << format_double(t.beta) << "\n"
    << "  l: " << t.l << "\n"
    << "  bits: " << t.bits << "\n"
    << "  optimizer: " << to_string(t.optimizer) << "\n"
    << "  lr: " << format_double(t.lr) << "\n"
    << "  momentum: " << format_double(t.momentum) << "\n"
    << "  adam_beta1: " << format_double(t.adam.beta1) << "\n"
    << "  adam_beta2: " << format_double(t.adam.beta2) << "\n"
    << "  adam_eps: " << format_double(t.adam.eps) << "\n"
    << "  hyper_lr: " << format_double(t.hyper_lr) << "\n"
    << "  epochs: " << t.epochs << "\n"
    << "  batch_size: " << t.batch_size << "\n"
    << "  lr_decay:\n"
    << "    every: " << t.lr_decay_every << "\n"
    << "    factor: " << format_double(t.lr_decay_factor) << "\n"
    << "  seed: " << t.seed << "\n"
    << "  history_source: " << to_string(t.history_source) << "\n"
    << "  lookahead: " << to_string(t.lookahead) << "\n"
    << "  record_wall_time: " << b(cfg.record_wall_time) << "\n";
  const auto& h = t.hyper;
  o << "hypernet:\n"
    << "  fast_kind: " << to_string(h.fast_kind) << "\n"
    << "  slow_kind: " << to_string(h.slow_kind) << "\n"
    << "  fast_hidden: " << h.fast_hidden << "\n"
    << "  d: " << h.d << "\n"
    << "  state_dim: " << h.state_dim << "\n"
    << "  expand: " << h.expand << "\n";
  const auto& d = cfg.data;
  o << "data:\n"
    << "  kind: " << data_kind_name(d.kind) << "\n"
    << "  n_per_class: " << d.n_per_class << "\n"
    << "  noise: " << format_double(d.noise) << "\n"
    << "  classes: " << d.classes << "\n"
    << "  test_per_class: " << d.test_per_class << "\n"
    << "  images: " << quote(d.images) << "\n"
    << "  labels: " << quote(d.labels) << "\n"
    << "  test_images: " << quote(d.test_images) << "\n"
    << "  test_labels: " << quote(d.test_labels) << "\n";
  o << "model:\n  input: [";
  for (std::size_t i = 0; i < cfg.model.input.size(); ++i) o << (i ? ", " : "") << cfg.model.input[i];
  o << "]\n  layers:\n";
  for (const auto& l : cfg.model.layers) {
    o << "    - kind: " << to_string(l.kind) << "\n";
    if (l.kind == LayerKind::dense || l.kind == LayerKind::conv2d) o << "      out: " << l.out << "\n";
    if (l.kind == LayerKind::conv2d) {
      o << "      kernel: " << l.kernel << "\n"
        << "      stride: " << l.stride << "\n"
        << "      pad: " << l.pad << "\n";
    }
    if (l.binarize) o << "      binarize: " << b(*l.binarize) << "\n";
  }
  const auto& c = cfg.convergence;
  o << "convergence:\n"
    << "  problem: " << to_string(c.problem) << "\n"
    << "  dim: " << c.dim << "\n"
    << "  n: " << c.n << "\n"
    << "  curvature: " << format_double(c.curvature) << "\n"
    << "  delta: " << format_double(c.delta) << "\n"
    << "  lambda: " << format_double(c.lambda) << "\n"
    << "  seeds: " << c.seeds << "\n"
    << "  seed: " << c.seed << "\n"
    << "  c: " << format_double(c.bench.c) << "\n"
    << "  beta: " << format_double(c.bench.beta) << "\n"
    << "  horizon: " << c.bench.horizon << "\n"
    << "  repeats: " << c.bench.repeats << "\n"
    << "  omega: " << format_double(c.bench.omega) << "\n"
    << "  theta: " << format_double(c.bench.theta) << "\n"
    << "  slow_noise: " << format_double(c.bench.slow_noise) << "\n"
    << "  x0_distance: " << format_double(c.bench.x0_distance) << "\n"
    << "  per_step_alpha: " << b(c.bench.per_step_alpha) << "\n";
  o << "output_dir: " << quote(cfg.output_dir) << "\n";
  return o.str();
}

void save_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_yaml(cfg);
}

}  // namespace fsg

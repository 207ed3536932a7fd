#include "fsg/runner.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

#include "fsg/convergence.hpp"
#include "fsg/trainer.hpp"

namespace fsg {

std::string metrics_row(const MetricsRecord& r) {
  return std::to_string(r.epoch) + "," + std::to_string(r.iter) + "," + r.split + "," + format_double(r.loss) + "," +
         format_double(r.accuracy) + "," + format_double(r.lr) + "," + format_double(r.wall_ms);
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError(path.string() + ": not a metrics file (header mismatch)");
  }
  std::vector<MetricsRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 7) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 7 fields");
    MetricsRecord r;
    r.epoch = std::stoul(f[0]);
    r.iter = std::stoul(f[1]);
    r.split = f[2];
    r.loss = std::stod(f[3]);
    r.accuracy = std::stod(f[4]);
    r.lr = std::stod(f[5]);
    r.wall_ms = std::stod(f[6]);
    out.push_back(r);
  }
  return out;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

DataSplits build_data(const DataSpec& spec, std::uint64_t seed) {
  DataSplits out;
  if (spec.kind == DataKind::idx) {
    out.train = load_idx(spec.images, spec.labels);
    if (!spec.test_images.empty()) out.test = load_idx(spec.test_images, spec.test_labels);
    return out;
  }
  const auto kind = spec.kind == DataKind::blobs ? SyntheticKind::blobs : SyntheticKind::spirals;
  Rng rng = Rng(seed).split(21);
  out.train = gen_synthetic(kind, spec.n_per_class, spec.noise, rng, spec.classes);
  if (spec.test_per_class > 0) {
    Rng trng = Rng(seed).split(22);
    out.test = gen_synthetic(kind, spec.test_per_class, spec.noise, trng, spec.classes);
  }
  return out;
}

std::filesystem::path output_root(const RunConfig& cfg) {
  if (const char* env = std::getenv("FSG_OUTPUT_ROOT"); env && *env) return env;
  return cfg.output_dir;
}

void write_manifest(const std::filesystem::path& path, const RunConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& extra) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
  nlohmann::ordered_json j;
  j["config_hash"] = hex64(fnv1a(to_yaml(cfg)));
  j["seed"] = cfg.train.seed;
  j["start_time"] = stamp;
  j["code_version"] = kCodeVersion;
  for (const auto& [k, v] : extra) j[k] = v;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

TrainOutcome run_training(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir,
                          const std::vector<std::pair<std::string, std::string>>& extra) {
  cfg.validate();
  const DataSplits data = build_data(cfg.data, cfg.train.seed);
  Rng model_rng = Rng(cfg.train.seed).split(10);
  Model model = Model::build(cfg.model, data.train.classes, model_rng);
  Trainer trainer(cfg.train, std::move(model));

  std::ofstream csv;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    save_config(cfg, *out_dir / "config.yaml");
    write_manifest(*out_dir / "manifest.json", cfg, extra);
    csv.open(*out_dir / "metrics.csv");
    if (!csv) throw std::runtime_error("cannot write metrics in " + out_dir->string());
    csv << kMetricsHeader << "\n";
  }

  TrainOutcome outcome;
  const auto start = std::chrono::steady_clock::now();
  auto emit = [&](MetricsRecord r) {
    if (cfg.record_wall_time) {
      r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    if (csv.is_open()) csv << metrics_row(r) << "\n" << std::flush;
    outcome.records.push_back(std::move(r));
  };
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    trainer.train_epoch(data.train, epoch);
    const double lr = cfg.train.lr_at(epoch);
    const EvalResult tr = trainer.evaluate(data.train);
    emit({epoch, trainer.iteration(), "train", tr.loss, tr.accuracy, lr, 0.0});
    outcome.final_train_loss = tr.loss;
    outcome.final_train_accuracy = tr.accuracy;
    if (data.test) {
      const EvalResult te = trainer.evaluate(*data.test);
      emit({epoch, trainer.iteration(), "test", te.loss, te.accuracy, lr, 0.0});
    }
  }
  return outcome;
}

std::vector<SweepPoint> parse_sweep(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw std::invalid_argument("sweep must look like key=v1,v2 or key=a..b, got '" + text + "'");
  }
  const std::string key = text.substr(0, eq), rest = text.substr(eq + 1);
  if (key != "beta" && key != "alpha" && key != "l" && key != "slow") {
    throw std::invalid_argument("unknown sweep key '" + key + "' (expected beta, alpha, l or slow)");
  }
  std::vector<SweepPoint> out;
  if (const auto dots = rest.find(".."); dots != std::string::npos) {
    if (key != "l") throw std::invalid_argument("ranges a..b are only supported for l");
    const long lo = std::stol(rest.substr(0, dots)), hi = std::stol(rest.substr(dots + 2));
    if (lo < 1 || hi < lo) throw std::invalid_argument("bad range '" + rest + "'");
    for (long v = lo; v <= hi; ++v) out.push_back({key, std::to_string(v)});
    return out;
  }
  for (const auto& v : split(rest, ',')) {
    if (v.empty()) throw std::invalid_argument("empty value in sweep '" + text + "'");
    out.push_back({key, v});
  }
  return out;
}

RunConfig apply_sweep(RunConfig cfg, const SweepPoint& p) {
  std::size_t used = 0;
  if (p.key == "beta") {
    cfg.train.beta = std::stod(p.value, &used);
  } else if (p.key == "alpha") {
    cfg.train.alpha = std::stod(p.value, &used);
  } else if (p.key == "l") {
    cfg.train.l = std::stoul(p.value, &used);
  } else if (p.key == "slow") {
    cfg.train.hyper.slow_kind = parse_slow_kind(p.value);
    used = p.value.size();
  }
  if (used != p.value.size()) throw std::invalid_argument("bad sweep value '" + p.value + "' for " + p.key);
  cfg.validate();
  return cfg;
}

BenchSummary run_bench(const ConvergenceSpec& spec) {
  BenchSummary summary;
  BenchConfig bc = spec.bench;
  bc.keep_traces = true;
  const std::size_t T = bc.horizon;
  std::vector<std::size_t> logged{0};
  for (std::size_t t : log_points(1, T, 60)) logged.push_back(t);

  for (std::size_t s = 0; s < spec.seeds; ++s) {
    const std::uint64_t seed = spec.seed + s;
    Rng prng = Rng(seed).split(1);
    const ConvexProblem problem = spec.problem == ProblemKind::quadratic
                                      ? ConvexProblem::quadratic(spec.dim, spec.n, spec.curvature, spec.delta, prng)
                                      : ConvexProblem::logistic(spec.dim, spec.n, spec.lambda, prng);
    Rng rrng = Rng(seed).split(2);
    const BenchResult res = run_fsg_convex(problem, bc, rrng);

    BenchSeedResult out;
    out.seed = seed;
    out.failed = res.failed;
    out.kappa = res.kappa;
    out.rho = res.rho;
    out.g_max = res.g_max;
    out.delta = res.delta;
    out.alpha = bc.alpha_at(0);
    for (const auto& tr : res.traces) {
      if (!tr.diverged) out.pk_residual = std::max(out.pk_residual, pk_recursion_check(tr, bc.beta));
    }
    if (!res.failed) {
      out.slope = rate_fit(res.gap_mean, std::min<std::size_t>(100, T / 2), T);
      out.bound_holds = true;
      for (std::size_t t : logged) {
        const double bound = theorem_bound(res, bc, t);
        out.t.push_back(t);
        out.gap.push_back(res.gap_mean[t]);
        out.stderr_.push_back(res.gap_stderr[t]);
        out.worst_bound_ratio = std::max(out.worst_bound_ratio, res.gap_mean[t] / bound);
        if (!(res.gap_mean[t] <= bound)) out.bound_holds = false;
      }
    }
    if (!out.failed && out.slope >= -1.2 && out.slope <= -0.3) ++summary.slopes_in_bracket;
    summary.max_pk_residual = std::max(summary.max_pk_residual, out.pk_residual);
    summary.all_bounds_hold = summary.all_bounds_hold && out.bound_holds;
    summary.seeds.push_back(std::move(out));
  }
  return summary;
}

void write_bench(const BenchSummary& s, const ConvergenceSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "bench.csv");
  csv << "seed,t,mean_gap,stderr\n";
  for (const auto& r : s.seeds)
    for (std::size_t i = 0; i < r.t.size(); ++i)
      csv << r.seed << "," << r.t[i] << "," << format_double(r.gap[i]) << "," << format_double(r.stderr_[i]) << "\n";

  nlohmann::ordered_json j;
  j["problem"] = std::string(to_string(spec.problem));
  j["dim"] = spec.dim;
  j["delta"] = spec.delta;
  j["beta"] = spec.bench.beta;
  j["c"] = spec.bench.c;
  j["horizon"] = spec.bench.horizon;
  j["repeats"] = spec.bench.repeats;
  j["slopes_in_bracket"] = s.slopes_in_bracket;
  j["max_pk_residual"] = s.max_pk_residual;
  j["all_bounds_hold"] = s.all_bounds_hold;
  auto& arr = j["seeds"] = nlohmann::ordered_json::array();
  for (const auto& r : s.seeds) {
    arr.push_back({{"seed", r.seed},
                   {"slope", r.slope},
                   {"pk_residual", r.pk_residual},
                   {"bound_holds", r.bound_holds},
                   {"worst_gap_to_bound", r.worst_bound_ratio},
                   {"failed", r.failed},
                   {"constants",
                    {{"omega", spec.bench.omega},
                     {"theta", spec.bench.theta},
                     {"kappa", r.kappa},
                     {"rho", r.rho},
                     {"G", r.g_max},
                     {"delta", r.delta},
                     {"alpha", r.alpha}}}});
  }
  std::ofstream js(dir / "summary.json");
  js << j.dump(2) << "\n";
}

std::string dump_curve(const std::filesystem::path& metrics_csv) {
  std::ostringstream o;
  o << "epoch,iter,split,loss\n";
  std::ifstream in(metrics_csv);
  if (!in) throw std::runtime_error("cannot open " + metrics_csv.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw FormatError(metrics_csv.string() + ": not a metrics file (header mismatch)");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 7) throw FormatError(metrics_csv.string() + ": malformed row '" + line + "'");
    o << f[0] << "," << f[1] << "," << f[2] << "," << f[3] << "\n";
  }
  return o.str();
}

}  // namespace fsg

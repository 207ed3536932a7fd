#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fsg/config.hpp"
#include "fsg/data.hpp"

namespace fsg {

inline constexpr const char* kCodeVersion = "fsg-lab 0.3.0";
inline constexpr const char* kMetricsHeader = "epoch,iter,split,loss,accuracy,lr,wall_ms";

struct MetricsRecord {
  std::size_t epoch = 0;
  std::size_t iter = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

std::string metrics_row(const MetricsRecord& r);
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

/// Train and optional test split described by `spec`.
struct DataSplits {
  Dataset train;
  std::optional<Dataset> test;
};
DataSplits build_data(const DataSpec& spec, std::uint64_t seed);

/// FSG_OUTPUT_ROOT when set, else cfg.output_dir.
std::filesystem::path output_root(const RunConfig& cfg);

struct TrainOutcome {
  std::vector<MetricsRecord> records;
  double final_train_loss = 0.0;
  double final_train_accuracy = 0.0;
};

/// Trains per `cfg`. When `out_dir` is given, writes metrics.csv,
/// config.yaml and manifest.json there. `extra` fields are merged into
/// the manifest.
TrainOutcome run_training(const RunConfig& cfg, const std::optional<std::filesystem::path>& out_dir,
                          const std::vector<std::pair<std::string, std::string>>& extra = {});

struct SweepPoint {
  std::string key;    // beta, alpha, l or slow
  std::string value;
};

/// "beta=0.1,0.3", "l=3..7" or "slow=lstm,ssm".
std::vector<SweepPoint> parse_sweep(const std::string& text);
RunConfig apply_sweep(RunConfig cfg, const SweepPoint& p);

struct BenchSeedResult {
  std::uint64_t seed = 0;
  double slope = 0.0;
  double pk_residual = 0.0;
  bool bound_holds = false;
  double worst_bound_ratio = 0.0;  // max gap / bound over logged t
  bool failed = false;
  std::vector<std::size_t> t;
  std::vector<double> gap;
  std::vector<double> stderr_;
  double kappa = 0, rho = 0, g_max = 0, delta = 0, alpha = 0;
};

struct BenchSummary {
  std::vector<BenchSeedResult> seeds;
  std::size_t slopes_in_bracket = 0;
  double max_pk_residual = 0.0;
  bool all_bounds_hold = true;
};

BenchSummary run_bench(const ConvergenceSpec& spec);
void write_bench(const BenchSummary& s, const ConvergenceSpec& spec, const std::filesystem::path& dir);

/// Projection of a metrics CSV onto (epoch, iter, split, loss).
std::string dump_curve(const std::filesystem::path& metrics_csv);

void write_manifest(const std::filesystem::path& path, const RunConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& extra);

}  // namespace fsg

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsg/convergence.hpp"
#include "fsg/model.hpp"
#include "fsg/trainer.hpp"

namespace fsg {

/// Parse or validation failure. `line`/`column` are 1-based, 0 when unknown.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0, std::size_t column = 0);
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

enum class DataKind { blobs, spirals, idx };

struct DataSpec {
  DataKind kind = DataKind::spirals;
  std::size_t n_per_class = 400;
  double noise = 0.15;
  std::size_t classes = 2;
  std::size_t test_per_class = 0;  // synthetic held-out set; 0 = none
  std::string images, labels;
  std::string test_images, test_labels;

  bool operator==(const DataSpec&) const = default;
};

struct ConvergenceSpec {
  ProblemKind problem = ProblemKind::quadratic;
  std::size_t dim = 10;
  std::size_t n = 1000;
  double curvature = 1.0;
  double delta = 0.1;
  double lambda = 0.1;
  std::size_t seeds = 10;
  std::uint64_t seed = 0;
  BenchConfig bench;

  bool operator==(const ConvergenceSpec& o) const;
};

struct RunConfig {
  TrainConfig train;
  bool record_wall_time = false;
  DataSpec data;
  ModelSpec model = default_model();
  ConvergenceSpec convergence;
  std::string output_dir = "runs";

  static ModelSpec default_model();
  /// Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical, byte-stable serialization; parse_config(to_yaml(c)) == c.
std::string to_yaml(const RunConfig& cfg);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace fsg

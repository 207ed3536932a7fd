#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsg {

using Shape = std::vector<std::size_t>;

/// Raised when tensor shapes do not agree with an operation's contract.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an argument lies outside the mathematical domain of an op.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised when a function produces (or receives) a non-finite value.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a caller violates a usage contract (wrong call order,
/// missing state, empty input).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor of doubles.
///
/// The product of `shape()` always equals `numel()`. A default-constructed
/// tensor is empty with rank 0.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// Rank-1 tensor holding `values`.
  static Tensor vector(std::initializer_list<double> values);
  static Tensor vector(std::vector<double> values);
  /// Rank-2 tensor; `values` are given row by row.
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// Element (r, c) of a rank-2 tensor.
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  /// Copy with a new shape of equal element count.
  Tensor reshaped(Shape shape) const;
  /// Row-major flattening into an (n x 1) column.
  Tensor as_column() const;

  void fill(double value);
  bool all_finite() const noexcept;
  bool same_shape(const Tensor& other) const noexcept {
    return shape_ == other.shape_;
  }

  /// Bitwise equality of shape and values.
  bool operator==(const Tensor& other) const noexcept;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor zeros_like(const Tensor& t);

// Elementwise helpers. All require equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
void add_inplace(Tensor& dst, const Tensor& src);
void axpy(double alpha, const Tensor& x, Tensor& y);  // y += alpha * x

double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);
double sum(const Tensor& t);
double dot(const Tensor& a, const Tensor& b);

void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// Seeded pseudo-random stream.
///
/// Backed by the 64-bit Mersenne Twister (`std::mt19937_64`), whose output
/// sequence is fixed by the C++ standard. Uniforms take the top 53 bits of
/// each draw; normals use the Marsaglia polar method; bounded integers use
/// rejection sampling. None of the `<random>` distributions are used because
/// their outputs are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  /// Independent child stream; derived by SplitMix64 of (seed, stream).
  Rng split(std::uint64_t stream) const;

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi);

}  // namespace fsg

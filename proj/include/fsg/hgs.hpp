#pragma once

#include <deque>
#include <filesystem>
#include <vector>

#include "fsg/tensor.hpp"

namespace fsg {

/// Raised by window() on a buffer that has not seen a gradient yet.
class EmptyHistoryError : public ContractError {
 public:
  using ContractError::ContractError;
};

/// Per-layer FIFO of the last `capacity` flattened weight gradients.
///
/// Gradients are flattened row-major, so a conv gradient is laid out in
/// (C_out, C_in, K, K) order. Entries are kept oldest first.
class GradientHistoryBuffer {
 public:
  GradientHistoryBuffer(std::size_t layer_index, std::size_t capacity, std::size_t xi);

  std::size_t layer_index() const noexcept { return layer_index_; }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t xi() const noexcept { return xi_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  void push(const Tensor& grad);
  /// Oldest-first concatenation as a (xi * size) x 1 column.
  Tensor window() const;
  const std::deque<std::vector<double>>& entries() const noexcept { return entries_; }
  void clear() { entries_.clear(); }

  /// One row per stored step (oldest first), one column per flattened index.
  void write_csv(const std::filesystem::path& path) const;

 private:
  std::size_t layer_index_;
  std::size_t capacity_;
  std::size_t xi_;
  std::deque<std::vector<double>> entries_;
};

}  // namespace fsg

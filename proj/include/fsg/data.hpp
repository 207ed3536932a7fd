#pragma once

#include <filesystem>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "fsg/tensor.hpp"

namespace fsg {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Tensor x;                 // N x (sample shape)
  std::vector<int> labels;  // N
  std::size_t classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;
  /// Rows `idx[begin, end)` as a batch.
  Dataset slice(const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) const;
};

enum class SyntheticKind { blobs, spirals };

SyntheticKind parse_synthetic_kind(std::string_view text);
std::string_view to_string(SyntheticKind kind);

/// blobs: `classes` isotropic Gaussian clusters with centers on the unit
/// circle scaled by 2. spirals: two interleaved arms (classes must be 2).
Dataset gen_synthetic(SyntheticKind kind, std::size_t n_per_class, double noise, Rng& rng,
                      std::size_t classes = 2);

/// Big-endian IDX pair: images (magic 0x803, N x H x W bytes) and labels
/// (magic 0x801). Pixels scaled by 1/255; images come back as N x 1 x H x W.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace fsg

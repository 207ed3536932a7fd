#include "fsg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

namespace fsg {

Shape Dataset::sample_shape() const { return Shape(x.shape().begin() + 1, x.shape().end()); }

Dataset Dataset::slice(const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) const {
  if (begin >= end || end > idx.size()) throw ContractError("dataset slice: empty or out-of-range batch");
  const std::size_t row = x.numel() / size();
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<double> data;
  data.reserve((end - begin) * row);
  Dataset out;
  out.classes = classes;
  for (std::size_t k = begin; k < end; ++k) {
    const std::size_t r = idx[k];
    data.insert(data.end(), x.data().begin() + static_cast<std::ptrdiff_t>(r * row),
                x.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * row));
    out.labels.push_back(labels[r]);
  }
  out.x = Tensor(std::move(shape), std::move(data));
  return out;
}

SyntheticKind parse_synthetic_kind(std::string_view text) {
  if (text == "blobs") return SyntheticKind::blobs;
  if (text == "spirals") return SyntheticKind::spirals;
  throw std::invalid_argument("unknown synthetic dataset '" + std::string(text) + "'");
}

std::string_view to_string(SyntheticKind kind) { return kind == SyntheticKind::blobs ? "blobs" : "spirals"; }

Dataset gen_synthetic(SyntheticKind kind, std::size_t n_per_class, double noise, Rng& rng,
                      std::size_t classes) {
  if (n_per_class == 0) throw DomainError("gen_synthetic: n_per_class must be >= 1");
  if (noise < 0.0) throw DomainError("gen_synthetic: noise must be >= 0");
  if (kind == SyntheticKind::spirals && classes != 2) throw DomainError("spirals have exactly 2 classes");
  if (classes < 2) throw DomainError("gen_synthetic: need at least 2 classes");

  Dataset ds;
  ds.classes = classes;
  ds.x = Tensor({n_per_class * classes, 2});
  std::size_t row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t j = 0; j < n_per_class; ++j, ++row) {
      double px = 0.0, py = 0.0;
      if (kind == SyntheticKind::blobs) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
        px = 2.0 * std::cos(angle);
        py = 2.0 * std::sin(angle);
      } else {
        // One turn per arm, radius growing linearly with angle.
        const double t = (static_cast<double>(j) + 0.5) / static_cast<double>(n_per_class);
        const double theta = std::numbers::pi * (0.5 + 2.0 * t);
        const double r = 2.0 * theta / (2.0 * std::numbers::pi);
        const double sign = c == 0 ? 1.0 : -1.0;
        px = sign * r * std::cos(theta);
        py = sign * r * std::sin(theta);
      }
      if (noise > 0.0) {
        px += noise * rng.normal();
        py += noise * rng.normal();
      }
      ds.x.at(row, 0) = px;
      ds.x.at(row, 1) = py;
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::filesystem::path& path) {
  if (off + 4 > b.size()) throw FormatError(path.string() + ": truncated header");
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_all(images);
  const auto lab = read_all(labels);

  const std::uint32_t img_magic = be32(img, 0, images);
  if (img_magic != 0x00000803) {
    throw FormatError(images.string() + ": bad image magic " + hex(img_magic) + ", expected 0x00000803");
  }
  const std::uint32_t lab_magic = be32(lab, 0, labels);
  if (lab_magic != 0x00000801) {
    throw FormatError(labels.string() + ": bad label magic " + hex(lab_magic) + ", expected 0x00000801");
  }
  const std::size_t n = be32(img, 4, images);
  const std::size_t h = be32(img, 8, images);
  const std::size_t w = be32(img, 12, images);
  const std::size_t n_labels = be32(lab, 4, labels);
  if (n == 0 || h == 0 || w == 0) throw FormatError(images.string() + ": zero dimension in header");
  if (img.size() != 16 + n * h * w) {
    throw std::length_error(images.string() + ": payload has " + std::to_string(img.size() - 16) +
                            " bytes, header implies " + std::to_string(n * h * w));
  }
  if (lab.size() != 8 + n_labels) {
    throw std::length_error(labels.string() + ": payload has " + std::to_string(lab.size() - 8) +
                            " bytes, header implies " + std::to_string(n_labels));
  }
  if (n_labels != n) {
    throw ContractError("IDX count mismatch: " + std::to_string(n) + " images vs " +
                        std::to_string(n_labels) + " labels");
  }

  Dataset ds;
  std::vector<double> px(n * h * w);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<double>(img[16 + i]) / 255.0;
  ds.x = Tensor({n, 1, h, w}, std::move(px));
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels.push_back(lab[8 + i]);
    max_label = std::max(max_label, ds.labels.back());
  }
  ds.classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

}  // namespace fsg

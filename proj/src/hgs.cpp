#include "fsg/hgs.hpp"

#include <charconv>
#include <fstream>

namespace fsg {

GradientHistoryBuffer::GradientHistoryBuffer(std::size_t layer_index, std::size_t capacity,
                                             std::size_t xi)
    : layer_index_(layer_index), capacity_(capacity), xi_(xi) {
  if (capacity == 0) throw DomainError("history capacity l must be >= 1");
  if (xi == 0) throw DimensionError("history element count must be >= 1");
}

void GradientHistoryBuffer::push(const Tensor& grad) {
  if (grad.numel() != xi_) {
    throw DimensionError("history push for layer " + std::to_string(layer_index_) +
                         ": expected " + std::to_string(xi_) + " elements, got " +
                         shape_str(grad.shape()));
  }
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.emplace_back(grad.values());
}

Tensor GradientHistoryBuffer::window() const {
  if (entries_.empty()) {
    throw EmptyHistoryError("history for layer " + std::to_string(layer_index_) + " is empty");
  }
  std::vector<double> flat;
  flat.reserve(entries_.size() * xi_);
  for (const auto& e : entries_) flat.insert(flat.end(), e.begin(), e.end());
  const std::size_t n = flat.size();
  return Tensor({n, 1}, std::move(flat));
}

void GradientHistoryBuffer::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << "step";
  for (std::size_t j = 0; j < xi_; ++j) out << ",g" << j;
  out << '\n';
  char buf[32];
  std::size_t step = 0;
  for (const auto& e : entries_) {
    out << step++;
    for (double v : e) {
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
}

}  // namespace fsg

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace boxseg {

// H x W map of class indices, row-major. Class 0 is background.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = 0)
      : height(h), width(w), labels(h * w, fill) {}
  LabelMap(std::size_t h, std::size_t w, std::vector<std::uint8_t> values);

  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::size_t size() const noexcept { return labels.size(); }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

}  // namespace boxseg

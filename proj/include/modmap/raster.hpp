#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "modmap/error.hpp"

namespace modmap {

/// Row-major H x W grid of 32-bit reals (images, depth maps, score maps).
struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  Raster() = default;
  Raster(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), values(h * w, fill) {}

  float& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
  float at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  std::size_t size() const noexcept { return values.size(); }
  bool same_shape(const Raster& o) const { return height == o.height && width == o.width; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

inline std::string shape_of(const Raster& r) {
  return std::to_string(r.height) + "x" + std::to_string(r.width);
}

} // namespace modmap

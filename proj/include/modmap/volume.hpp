#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "modmap/camera.hpp"
#include "modmap/error.hpp"
#include "modmap/parallel.hpp"
#include "modmap/raster.hpp"

namespace modmap {

/// Axis-aligned voxel lattice; voxel (x, y, z) covers origin + [x, x+1) * voxel_size, etc.
struct GridSpec {
  Vec3 origin{0, 0, 0};
  double voxel_size = 1.0;
  std::array<std::size_t, 3> dims{1, 1, 1};

  void validate() const {
    if (!(voxel_size > 0) || !std::isfinite(voxel_size)) throw UsageError("voxel_size must be positive");
    if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0) throw UsageError("voxel grid has a zero dimension");
  }

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }

  std::size_t flat(std::size_t x, std::size_t y, std::size_t z) const { return (x * dims[1] + y) * dims[2] + z; }

  std::optional<std::size_t> index_of(const Vec3& p) const {
    std::array<std::size_t, 3> ijk{};
    for (int a = 0; a < 3; ++a) {
      const double f = std::floor((p[a] - origin[a]) / voxel_size);
      if (!(f >= 0) || f >= double(dims[a])) return std::nullopt;
      ijk[a] = static_cast<std::size_t>(f);
    }
    return flat(ijk[0], ijk[1], ijk[2]);
  }

  Vec3 center(std::size_t x, std::size_t y, std::size_t z) const {
    return {origin[0] + (double(x) + 0.5) * voxel_size, origin[1] + (double(y) + 0.5) * voxel_size,
            origin[2] + (double(z) + 0.5) * voxel_size};
  }

  Vec3 center(std::size_t flat_index) const {
    const std::size_t z = flat_index % dims[2];
    const std::size_t y = (flat_index / dims[2]) % dims[1];
    const std::size_t x = flat_index / (dims[1] * dims[2]);
    return center(x, y, z);
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct VoxelGrid {
  GridSpec spec;
  std::vector<float> scores;
  std::vector<std::uint32_t> hit_counts;

  explicit VoxelGrid(const GridSpec& s = {}) : spec(s) {
    spec.validate();
    scores.assign(spec.voxel_count(), 0.0f);
    hit_counts.assign(spec.voxel_count(), 0);
  }

  std::size_t observed() const {
    return static_cast<std::size_t>(std::count_if(hit_counts.begin(), hit_counts.end(), [](auto h) { return h > 0; }));
  }
};

enum class FuseFunction { max, min, product, mean };

inline const char* to_string(FuseFunction f) {
  switch (f) {
  case FuseFunction::max: return "max";
  case FuseFunction::min: return "min";
  case FuseFunction::product: return "product";
  case FuseFunction::mean: return "mean";
  }
  return "?";
}

inline FuseFunction parse_fuse(const std::string& s) {
  if (s == "max") return FuseFunction::max;
  if (s == "min") return FuseFunction::min;
  if (s == "product") return FuseFunction::product;
  if (s == "mean") return FuseFunction::mean;
  throw UsageError("unknown fuse function '" + s + "' (expected max|min|product|mean)");
}

/// Element-wise combination of the two modality maps of one view.
inline Raster fuse_modalities(const Raster& image_map, const Raster& depth_map, FuseFunction fuse = FuseFunction::max) {
  if (!image_map.same_shape(depth_map))
    throw DimensionMismatch("fusing " + shape_of(image_map) + " with " + shape_of(depth_map));
  Raster out(image_map.height, image_map.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float a = image_map.values[i], b = depth_map.values[i];
    switch (fuse) {
    case FuseFunction::max: out.values[i] = std::max(a, b); break;
    case FuseFunction::min: out.values[i] = std::min(a, b); break;
    case FuseFunction::product: out.values[i] = a * b; break;
    case FuseFunction::mean: out.values[i] = 0.5f * (a + b); break;
    }
  }
  return out;
}

enum class UpsamplePolicy { bilinear, nearest };

/// Cell-grid map to pixel resolution. Cell (r, q) is centred on pixel
/// ((q + 0.5) p - 0.5, (r + 0.5) p - 0.5); samples outside are clamped.
/// Per-pixel lookup of a cell map stretched to height x width. Bilinear
/// weights are tabulated once per row and column.
class Upsampler {
public:
  Upsampler(const Raster& cells, std::size_t height, std::size_t width, UpsamplePolicy policy)
      : cells_(cells), policy_(policy) {
    if (cells.height == 0 || cells.width == 0 || height % cells.height || width % cells.width)
      throw DimensionMismatch("cannot upsample " + shape_of(cells) + " to " + std::to_string(height) + "x" +
                              std::to_string(width));
    rows_ = taps(height, cells.height, double(height) / double(cells.height));
    cols_ = taps(width, cells.width, double(width) / double(cells.width));
  }

  float operator()(std::size_t r, std::size_t c) const {
    const Tap& y = rows_[r];
    const Tap& x = cols_[c];
    if (policy_ == UpsamplePolicy::nearest) return cells_.at(y.nearest, x.nearest);
    return float((1 - y.f) * ((1 - x.f) * cells_.at(y.i0, x.i0) + x.f * cells_.at(y.i0, x.i1)) +
                 y.f * ((1 - x.f) * cells_.at(y.i1, x.i0) + x.f * cells_.at(y.i1, x.i1)));
  }

private:
  struct Tap {
    std::size_t nearest, i0, i1;
    double f;
  };

  static std::vector<Tap> taps(std::size_t n, std::size_t cells, double scale) {
    std::vector<Tap> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = std::clamp((double(i) + 0.5) / scale - 0.5, 0.0, double(cells - 1));
      const auto i0 = std::size_t(u);
      t[i] = {std::size_t(double(i) / scale), i0, std::min(i0 + 1, cells - 1), u - double(i0)};
    }
    return t;
  }

  const Raster& cells_;
  UpsamplePolicy policy_;
  std::vector<Tap> rows_, cols_;
};

inline Raster upsample(const Raster& cells, std::size_t height, std::size_t width,
                       UpsamplePolicy policy = UpsamplePolicy::bilinear) {
  const Upsampler up(cells, height, width, policy);
  Raster out(height, width);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) out.at(r, c) = up(r, c);
  return out;
}

/// Geometry needed to place one view's pixels in the world.
struct ViewGeometry {
  const Raster* depth = nullptr;
  const CameraCalib* calib = nullptr;
};

struct AggregateResult {
  VoxelGrid grid;
  std::size_t projected = 0;
  std::size_t dropped = 0; // valid pixels landing outside the grid

  double dropped_fraction() const { return projected ? double(dropped) / double(projected) : 0.0; }
  bool warn() const { return dropped_fraction() > 0.01; }
};

/// Scatters every valid-depth pixel's (upsampled) score into the voxel of its
/// unprojected point, keeping the running maximum per voxel.
inline AggregateResult aggregate(const std::vector<Raster>& maps, const std::vector<ViewGeometry>& views,
                                 const GridSpec& spec, UpsamplePolicy policy = UpsamplePolicy::bilinear) {
  spec.validate();
  if (maps.size() != views.size()) throw DimensionMismatch("aggregate got " + std::to_string(maps.size()) +
                                                           " maps for " + std::to_string(views.size()) + " views");
  struct Partial {
    std::vector<std::pair<std::size_t, float>> writes;
    std::size_t projected = 0, dropped = 0;
  };
  std::vector<Partial> partial(maps.size());
  parallel_for(maps.size(), [&](std::size_t v) {
    const Raster& depth = *views[v].depth;
    const CameraCalib& calib = *views[v].calib;
    const Upsampler full(maps[v], depth.height, depth.width, policy);
    auto& part = partial[v];
    for (std::size_t r = 0; r < depth.height; ++r)
      for (std::size_t c = 0; c < depth.width; ++c) {
        const float d = depth.at(r, c);
        if (!(d > 0)) continue;
        ++part.projected;
        const auto idx = spec.index_of(unproject(double(c), double(r), double(d), calib));
        if (!idx) {
          ++part.dropped;
          continue;
        }
        part.writes.emplace_back(*idx, full(r, c));
      }
  });
  AggregateResult out{VoxelGrid(spec)};
  for (const auto& part : partial) {
    out.projected += part.projected;
    out.dropped += part.dropped;
    for (const auto& [idx, score] : part.writes) {
      out.grid.scores[idx] = std::max(out.grid.scores[idx], score);
      ++out.grid.hit_counts[idx];
    }
  }
  return out;
}

/// Maximum over observed voxels; 0 for an empty grid.
inline double instance_score(const VoxelGrid& grid) {
  double best = 0;
  for (std::size_t i = 0; i < grid.scores.size(); ++i)
    if (grid.hit_counts[i] > 0) best = std::max(best, double(grid.scores[i]));
  return best;
}

/// Box around the unprojected foreground of the given views, padded by
/// `padding` of the extent on each side, with the longest axis split into
/// `max_dim` voxels.
inline GridSpec fit_grid(const std::vector<ViewGeometry>& views, double padding = 0.05, std::size_t max_dim = 64) {
  Vec3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
  Vec3 hi{-lo[0], -lo[1], -lo[2]};
  std::size_t n = 0;
  for (const auto& v : views)
    for (std::size_t r = 0; r < v.depth->height; ++r)
      for (std::size_t c = 0; c < v.depth->width; ++c) {
        const float d = v.depth->at(r, c);
        if (!(d > 0)) continue;
        const Vec3 p = unproject(double(c), double(r), double(d), *v.calib);
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], p[a]);
          hi[a] = std::max(hi[a], p[a]);
        }
        ++n;
      }
  if (n == 0) throw DataError("cannot fit a voxel grid: no valid depth");
  double longest = 0;
  for (int a = 0; a < 3; ++a) {
    const double pad = padding * (hi[a] - lo[a]);
    lo[a] -= pad;
    hi[a] += pad;
    longest = std::max(longest, hi[a] - lo[a]);
  }
  GridSpec g;
  g.origin = lo;
  g.voxel_size = longest / double(max_dim);
  for (int a = 0; a < 3; ++a)
    g.dims[a] = std::clamp<std::size_t>(std::size_t(std::ceil((hi[a] - lo[a]) / g.voxel_size)), 1, max_dim);
  return g;
}

} // namespace modmap

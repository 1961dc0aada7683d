#pragma once

// Frozen, pixel-aligned patch encoders. Every feature cell is computed from
// the pixels of its own p x p patch only.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "modmap/camera.hpp"
#include "modmap/error.hpp"
#include "modmap/nn/matrix.hpp"
#include "modmap/raster.hpp"

namespace modmap {

enum class Modality { image, depth };

inline const char* to_string(Modality m) { return m == Modality::image ? "image" : "depth"; }

/// One view of an instance: grayscale image in [0,1], depth in meters (0 = invalid).
struct ViewSample {
  std::size_t view_index = 0; // 0-based
  Raster image;
  Raster depth;
  CameraCalib calib;

  void validate() const {
    if (!image.same_shape(depth))
      throw DimensionMismatch("image " + shape_of(image) + " vs depth " + shape_of(depth));
    for (float d : depth.values)
      if (!std::isfinite(d) || d < 0) throw DataError("depth values must be finite and >= 0");
  }
};

enum class ResizePolicy { none, stretch };

struct EncoderConfig {
  std::size_t patch_size = 8;
  std::size_t c_image = 16;
  std::size_t c_depth = 12;
  /// Scale applied to depth deviations (per meter) so that shape channels
  /// are commensurate with the mean-depth channel.
  double depth_relief_gain = 100.0;
  /// Same idea for intensity: texture and shading structure must not be
  /// swamped by the patch brightness.
  double image_contrast_gain = 4.0;
  /// Global multiplier on every descriptor channel (except the valid
  /// fraction), bringing magnitudes closer to those of learned backbones.
  double output_scale = 1.0;
  /// Optional frozen per-channel multipliers (empty = none), normally fitted
  /// once on the nominal training views with calibrate_channel_scales().
  std::vector<double> image_channel_scale;
  std::vector<double> depth_channel_scale;
  ResizePolicy resize = ResizePolicy::none;
  std::size_t resize_to = 0; // square target side when resize == stretch

  void validate() const {
    if (patch_size < 4) throw UsageError("patch_size must be >= 4");
    if (c_image < 4 || c_depth < 4) throw UsageError("channel counts must be >= 4");
    if (!image_channel_scale.empty() && image_channel_scale.size() != c_image)
      throw UsageError("image_channel_scale needs c_image entries");
    if (!depth_channel_scale.empty() && depth_channel_scale.size() != c_depth)
      throw UsageError("depth_channel_scale needs c_depth entries");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct FeatureMap {
  std::size_t h = 0, w = 0, c = 0;
  std::vector<float> data; // h * w * c, position-major
  Modality modality = Modality::image;
  std::size_t view_index = 0;

  std::size_t positions() const noexcept { return h * w; }
  float* cell(std::size_t r, std::size_t q) { return data.data() + (r * w + q) * c; }
  const float* cell(std::size_t r, std::size_t q) const { return data.data() + (r * w + q) * c; }

  std::span<const float> vec(std::size_t pos) const { return {data.data() + pos * c, c}; }

  /// Unrolled (h*w) x c view of the map.
  nn::Matrix as_matrix() const { return nn::Matrix(h * w, c, data); }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

namespace detail {

inline void check_divisible(const Raster& r, std::size_t p) {
  if (r.height == 0 || r.width == 0 || r.height % p != 0 || r.width % p != 0)
    throw DimensionMismatch("input " + shape_of(r) + " is not divisible by patch size " + std::to_string(p));
}

/// Descriptor family shared by both modalities (16 values):
/// Quadrant of the gradient direction with bins centred on +x, +y, -x, -y.
/// Away from the diagonals the dominant component decides; close to one, the
/// angle is computed so results match the atan2 definition bit for bit.
inline std::size_t orientation_bin(double gx, double gy) {
  const double ax = std::abs(gx), ay = std::abs(gy);
  if (std::abs(ax - ay) > 1e-9 * (ax + ay)) {
    if (ax > ay) return gx > 0 ? 0 : 2;
    return gy > 0 ? 1 : 3;
  }
  const double theta = std::atan2(gy, gx) + std::numbers::pi / 4;
  auto bin = static_cast<long>(std::floor(theta / (std::numbers::pi / 2)));
  return std::size_t(((bin % 4) + 4) % 4);
}

/// [mean, std, min, max, 4 orientation bins, 2x4 block means]. Everything
/// after the mean is taken relative to the mean and scaled by `gain`.
/// With `skip_invalid`, pixels <= 0 (missing depth) are ignored.
inline std::array<double, 16> patch_descriptor(const Raster& src, std::size_t r0, std::size_t c0,
                                               std::size_t p, bool skip_invalid, double gain,
                                               std::size_t* valid_count) {
  std::array<double, 16> d{};
  std::vector<double> val(p * p);
  std::vector<unsigned char> ok(p * p);
  std::size_t n = 0;
  double sum = 0, mn = 0, mx = 0;
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t c = 0; c < p; ++c) {
      const float raw = src.at(r0 + r, c0 + c);
      const std::size_t i = r * p + c;
      val[i] = double(raw);
      ok[i] = !skip_invalid || raw > 0.0f;
      if (!ok[i]) continue;
      const double v = val[i];
      if (n == 0) mn = mx = v;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
      sum += v;
      ++n;
    }
  if (valid_count) *valid_count = n;
  if (n == 0) return d;
  const double mean = sum / double(n);
  double var = 0;
  for (std::size_t i = 0; i < p * p; ++i)
    if (ok[i]) var += (val[i] - mean) * (val[i] - mean);
  const double sd = std::sqrt(var / double(n));
  d[0] = mean;
  d[1] = sd * gain;
  d[2] = (mn - mean) * gain;
  d[3] = (mx - mean) * gain;

  // Signed orientation histogram with bins centred on +x, +y, -x, -y, so a
  // plane's tilt direction survives. Magnitudes are changes across the patch.
  // One-sided differences at the patch border, central ones inside.
  for (std::size_t r = 0; r < p; ++r) {
    const std::size_t ru = r > 0 ? r - 1 : r, rd = r + 1 < p ? r + 1 : r;
    const double step_y = rd - ru == 2 ? 0.5 : 1.0;
    for (std::size_t c = 0; c < p; ++c) {
      const std::size_t cl = c > 0 ? c - 1 : c, cr = c + 1 < p ? c + 1 : c;
      if (!ok[r * p + cl] || !ok[r * p + cr] || !ok[ru * p + c] || !ok[rd * p + c]) continue;
      const double step_x = cr - cl == 2 ? 0.5 : 1.0;
      const double gx = (val[r * p + cr] - val[r * p + cl]) * step_x * gain;
      const double gy = (val[rd * p + c] - val[ru * p + c]) * step_y * gain;
      const double mag = std::sqrt(gx * gx + gy * gy);
      if (mag == 0) continue;
      d[4 + orientation_bin(gx, gy)] += mag;
    }
  }
  for (std::size_t b = 0; b < 4; ++b) d[4 + b] /= double(p);

  // 2x4 block means (2 rows, 4 columns) listed column by column, so any
  // truncation to three or more keeps both axes.
  std::array<double, 8> bsum{};
  std::array<std::size_t, 8> bcount{};
  for (std::size_t r = 0; r < p; ++r) {
    const std::size_t br = r * 2 / p;
    for (std::size_t c = 0; c < p; ++c) {
      if (!ok[r * p + c]) continue;
      const std::size_t b = (c * 4 / p) * 2 + br;
      bsum[b] += val[r * p + c];
      ++bcount[b];
    }
  }
  for (std::size_t b = 0; b < 8; ++b) {
    if (bcount[b] == 0) continue;
    const double m = bsum[b] / double(bcount[b]);
    d[8 + b] = (m - mean) * gain;
  }
  return d;
}

inline Raster stretch(const Raster& in, std::size_t side, bool nearest) {
  Raster out(side, side);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      const double sy = (double(r) + 0.5) * double(in.height) / double(side) - 0.5;
      const double sx = (double(c) + 0.5) * double(in.width) / double(side) - 0.5;
      if (nearest) {
        const auto y = static_cast<std::size_t>(std::clamp(std::lround(sy), 0l, long(in.height) - 1));
        const auto x = static_cast<std::size_t>(std::clamp(std::lround(sx), 0l, long(in.width) - 1));
        out.at(r, c) = in.at(y, x);
        continue;
      }
      const double y = std::clamp(sy, 0.0, double(in.height - 1)), x = std::clamp(sx, 0.0, double(in.width - 1));
      const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
      const std::size_t y1 = std::min(y0 + 1, in.height - 1), x1 = std::min(x0 + 1, in.width - 1);
      const double fy = y - double(y0), fx = x - double(x0);
      out.at(r, c) = float((1 - fy) * ((1 - fx) * in.at(y0, x0) + fx * in.at(y0, x1)) +
                           fy * ((1 - fx) * in.at(y1, x0) + fx * in.at(y1, x1)));
    }
  return out;
}

} // namespace detail

/// Applies the configured resize policy (bilinear for images, nearest for depth
/// so that invalid pixels are never blended into valid ones).
inline Raster resize_input(const Raster& in, const EncoderConfig& cfg, Modality m) {
  if (cfg.resize == ResizePolicy::none || cfg.resize_to == 0) return in;
  return detail::stretch(in, cfg.resize_to, m == Modality::depth);
}

inline FeatureMap encode_image(const Raster& image, const EncoderConfig& cfg, std::size_t view_index = 0) {
  cfg.validate();
  const Raster src = resize_input(image, cfg, Modality::image);
  const std::size_t p = cfg.patch_size;
  detail::check_divisible(src, p);
  FeatureMap f{src.height / p, src.width / p, cfg.c_image, {}, Modality::image, view_index};
  f.data.assign(f.h * f.w * f.c, 0.0f);
  for (std::size_t r = 0; r < f.h; ++r)
    for (std::size_t q = 0; q < f.w; ++q) {
      const auto d = detail::patch_descriptor(src, r * p, q * p, p, false, cfg.image_contrast_gain, nullptr);
      float* out = f.cell(r, q);
      for (std::size_t k = 0; k < std::min(f.c, d.size()); ++k) {
        const double w = cfg.image_channel_scale.empty() ? 1.0 : cfg.image_channel_scale[k];
        out[k] = float(d[k] * cfg.output_scale * w);
      }
    }
  return f;
}

/// Depth descriptor: the shared family over valid pixels, truncated to
/// c_depth - 1 channels, followed by the patch valid fraction.
inline FeatureMap encode_depth(const Raster& depth, const EncoderConfig& cfg, std::size_t view_index = 0) {
  cfg.validate();
  const Raster src = resize_input(depth, cfg, Modality::depth);
  const std::size_t p = cfg.patch_size;
  detail::check_divisible(src, p);
  FeatureMap f{src.height / p, src.width / p, cfg.c_depth, {}, Modality::depth, view_index};
  f.data.assign(f.h * f.w * f.c, 0.0f);
  for (std::size_t r = 0; r < f.h; ++r)
    for (std::size_t q = 0; q < f.w; ++q) {
      std::size_t n = 0;
      const auto d = detail::patch_descriptor(src, r * p, q * p, p, true, cfg.depth_relief_gain, &n);
      float* out = f.cell(r, q);
      for (std::size_t k = 0; k < std::min(f.c - 1, d.size()); ++k) {
        const double w = cfg.depth_channel_scale.empty() ? 1.0 : cfg.depth_channel_scale[k];
        out[k] = float(d[k] * cfg.output_scale * w);
      }
      out[f.c - 1] = float(double(n) / double(p * p));
    }
  return f;
}

/// Fraction of valid depth pixels per patch, laid out like the feature grid.
inline Raster valid_fraction(const Raster& depth, std::size_t patch_size) {
  detail::check_divisible(depth, patch_size);
  Raster out(depth.height / patch_size, depth.width / patch_size);
  for (std::size_t r = 0; r < depth.height; ++r)
    for (std::size_t c = 0; c < depth.width; ++c)
      if (depth.at(r, c) > 0) out.at(r / patch_size, c / patch_size) += 1.0f;
  for (auto& v : out.values) v /= float(patch_size * patch_size);
  return out;
}

struct ViewFeatures {
  FeatureMap image;
  FeatureMap depth;
  Raster valid; // per-cell valid fraction
};

inline ViewFeatures encode_view(const ViewSample& view, const EncoderConfig& cfg) {
  view.validate();
  const Raster depth = resize_input(view.depth, cfg, Modality::depth);
  return {encode_image(view.image, cfg, view.view_index), encode_depth(view.depth, cfg, view.view_index),
          valid_fraction(depth, cfg.patch_size)};
}

/// Sets per-channel scales so every channel has unit RMS over the foreground
/// cells of the given (nominal) views. The valid-fraction channel is left as is.
inline EncoderConfig calibrate_channel_scales(const std::vector<ViewSample>& views, EncoderConfig cfg) {
  cfg.image_channel_scale.clear();
  cfg.depth_channel_scale.clear();
  std::vector<double> si(cfg.c_image, 0.0), sd(cfg.c_depth, 0.0);
  std::size_t n = 0;
  for (const auto& v : views) {
    const auto f = encode_view(v, cfg);
    for (std::size_t pos = 0; pos < f.depth.positions(); ++pos) {
      if (f.valid.values[pos] <= 0) continue;
      for (std::size_t k = 0; k < cfg.c_image; ++k) si[k] += double(f.image.vec(pos)[k]) * f.image.vec(pos)[k];
      for (std::size_t k = 0; k < cfg.c_depth; ++k) sd[k] += double(f.depth.vec(pos)[k]) * f.depth.vec(pos)[k];
      ++n;
    }
  }
  if (n == 0) throw DataError("cannot calibrate channel scales without foreground cells");
  auto scales = [n](const std::vector<double>& sums) {
    std::vector<double> out;
    for (double s : sums) {
      const double rms = std::sqrt(s / double(n));
      out.push_back(rms > 1e-12 ? 1.0 / rms : 1.0);
    }
    return out;
  };
  cfg.image_channel_scale = scales(si);
  cfg.depth_channel_scale = scales(sd);
  cfg.depth_channel_scale.back() = 1.0;
  return cfg;
}

} // namespace modmap


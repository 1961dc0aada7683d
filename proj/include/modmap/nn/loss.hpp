#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "modmap/error.hpp"

namespace modmap::nn {

inline constexpr double kNormEpsilon = 1e-8;

template <typename T>
struct CosineResult {
  T distance;
  std::vector<T> grad_x;
};

/// 1 - x.y / ((|x| + eps)(|y| + eps)), with the analytic gradient w.r.t. x.
/// Vectors shorter than eps are rejected instead of silently scoring 1.
template <typename T>
CosineResult<T> cosine_distance(std::span<const T> x, std::span<const T> y, bool with_gradient = true) {
  if (x.size() != y.size())
    throw DimensionMismatch("cosine_distance lengths " + std::to_string(x.size()) + " and " +
                            std::to_string(y.size()));
  double dot = 0, xx = 0, yy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += double(x[i]) * double(y[i]);
    xx += double(x[i]) * double(x[i]);
    yy += double(y[i]) * double(y[i]);
  }
  const double nx = std::sqrt(xx), ny = std::sqrt(yy);
  if (nx < kNormEpsilon || ny < kNormEpsilon)
    throw DegenerateNorm("|x|=" + std::to_string(nx) + " |y|=" + std::to_string(ny));
  const double dx = nx + kNormEpsilon, dy = ny + kNormEpsilon;
  const double sim = dot / (dx * dy);
  CosineResult<T> out{static_cast<T>(1.0 - sim), {}};
  if (with_gradient) {
    out.grad_x.resize(x.size());
    const double a = 1.0 / (dx * dy);
    const double b = dot / (dx * dx * dy * nx);
    for (std::size_t i = 0; i < x.size(); ++i)
      out.grad_x[i] = static_cast<T>(-(a * double(y[i]) - b * double(x[i])));
  }
  return out;
}

/// Distance only, or a negative value when either vector is degenerate.
template <typename T>
double cosine_distance_or_negative(std::span<const T> x, std::span<const T> y) {
  double dot = 0, xx = 0, yy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += double(x[i]) * double(y[i]);
    xx += double(x[i]) * double(x[i]);
    yy += double(y[i]) * double(y[i]);
  }
  const double nx = std::sqrt(xx), ny = std::sqrt(yy);
  if (nx < kNormEpsilon || ny < kNormEpsilon) return -1.0;
  return 1.0 - dot / ((nx + kNormEpsilon) * (ny + kNormEpsilon));
}

} // namespace modmap::nn

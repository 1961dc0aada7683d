#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "modmap/error.hpp"
#include "modmap/volume.hpp"

namespace modmap::metrics {

/// Exact Mann-Whitney AUROC: P(pos > neg) + 0.5 P(tie).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw DimensionMismatch("auroc scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * double(i + 1 + j); // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] != 0) {
        pos_rank_sum += avg_rank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("auroc needs both classes present");
  const double u = pos_rank_sum - double(n_pos) * double(n_pos + 1) / 2.0;
  return u / (double(n_pos) * double(n_neg));
}

using Dims3 = std::array<std::size_t, 3>;

struct Labeling {
  std::vector<std::uint32_t> labels; // 0 = background, regions numbered from 1
  std::uint32_t count = 0;
};

/// 26-connected flood labeling; regions are numbered in order of their
/// lexicographically first voxel (flat index (x * Y + y) * Z + z).
inline Labeling connected_components(std::span<const std::uint8_t> mask, const Dims3& dims) {
  const std::size_t total = dims[0] * dims[1] * dims[2];
  if (mask.size() != total) throw DimensionMismatch("mask length does not match dims");
  Labeling out;
  out.labels.assign(total, 0);
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < total; ++seed) {
    if (!mask[seed] || out.labels[seed]) continue;
    const std::uint32_t id = ++out.count;
    out.labels[seed] = id;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      const long z = long(v % dims[2]), y = long((v / dims[2]) % dims[1]), x = long(v / (dims[1] * dims[2]));
      for (long dx = -1; dx <= 1; ++dx)
        for (long dy = -1; dy <= 1; ++dy)
          for (long dz = -1; dz <= 1; ++dz) {
            const long nx = x + dx, ny = y + dy, nz = z + dz;
            if (nx < 0 || ny < 0 || nz < 0 || nx >= long(dims[0]) || ny >= long(dims[1]) || nz >= long(dims[2]))
              continue;
            const std::size_t n = (std::size_t(nx) * dims[1] + std::size_t(ny)) * dims[2] + std::size_t(nz);
            if (mask[n] && !out.labels[n]) {
              out.labels[n] = id;
              stack.push_back(n);
            }
          }
    }
  }
  return out;
}

struct GroundTruthVolume {
  Dims3 dims{0, 0, 0};
  std::vector<std::uint8_t> mask;
  std::vector<std::uint32_t> region_labels;
  std::uint32_t regions = 0;

  static GroundTruthVolume from_mask(std::vector<std::uint8_t> mask, const Dims3& dims) {
    GroundTruthVolume gt;
    gt.dims = dims;
    gt.mask = std::move(mask);
    auto cc = connected_components(gt.mask, dims);
    gt.region_labels = std::move(cc.labels);
    gt.regions = cc.count;
    return gt;
  }

  bool empty() const { return regions == 0; }
};

struct ProPoint {
  double threshold;
  double fpr;
  double pro;
};

struct ProOptions {
  std::size_t max_exact = 1'000'000; // above this many observed voxels use quantile thresholds
  std::size_t quantiles = 512;
};

/// One volume of a pooled evaluation: regions of every sample count
/// separately and FPR is taken over the nominal voxels of all samples.
struct ProSample {
  const VoxelGrid* grid;
  const GroundTruthVolume* gt;
};

namespace detail {

struct Observed {
  std::vector<double> score;       // observed voxels
  std::vector<std::size_t> region; // global region id, 0 = nominal
  std::vector<std::size_t> order;  // indices into score, descending
  std::vector<double> region_weight;
  std::size_t regions_counted = 0;
  std::size_t nominal = 0;
};

inline Observed observe(std::span<const ProSample> samples) {
  Observed o;
  std::vector<std::size_t> region_size{0};
  for (const auto& smp : samples) {
    const auto& grid = *smp.grid;
    const auto& gt = *smp.gt;
    if (grid.spec.dims != gt.dims) throw DimensionMismatch("volume and ground truth dims differ");
    const std::size_t base = region_size.size() - 1;
    region_size.resize(region_size.size() + gt.regions, 0);
    for (std::size_t i = 0; i < grid.scores.size(); ++i) {
      if (grid.hit_counts[i] == 0) continue;
      const std::size_t r = gt.region_labels[i] ? base + gt.region_labels[i] : 0;
      o.score.push_back(grid.scores[i]);
      o.region.push_back(r);
      if (r) ++region_size[r];
      else ++o.nominal;
    }
  }
  o.region_weight.assign(region_size.size(), 0.0);
  for (std::size_t r = 1; r < region_size.size(); ++r)
    if (region_size[r]) {
      o.region_weight[r] = 1.0 / double(region_size[r]);
      ++o.regions_counted;
    }
  if (o.regions_counted == 0) throw DataError("pro curve needs at least one observed anomalous region");
  if (o.nominal == 0) throw DataError("pro curve needs observed nominal voxels");
  o.order.resize(o.score.size());
  std::iota(o.order.begin(), o.order.end(), std::size_t{0});
  std::stable_sort(o.order.begin(), o.order.end(), [&](auto a, auto b) { return o.score[a] > o.score[b]; });
  return o;
}

} // namespace detail

/// PRO and FPR at each threshold (prediction = score >= threshold), preceded
/// by the empty-prediction point (0, 0). Unobserved voxels are ignored.
inline std::vector<ProPoint> pro_curve(std::span<const ProSample> samples, std::span<const double> thresholds) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] < thresholds[i - 1])) throw UsageError("pro thresholds must be strictly decreasing");
  const auto o = detail::observe(samples);
  std::vector<ProPoint> curve{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  double overlap_sum = 0;
  std::size_t fp = 0, k = 0;
  for (double tau : thresholds) {
    while (k < o.order.size() && o.score[o.order[k]] >= tau) {
      const auto r = o.region[o.order[k]];
      if (r) overlap_sum += o.region_weight[r];
      else ++fp;
      ++k;
    }
    curve.push_back({tau, double(fp) / double(o.nominal), overlap_sum / double(o.regions_counted)});
  }
  return curve;
}

inline std::vector<ProPoint> pro_curve(const VoxelGrid& grid, const GroundTruthVolume& gt,
                                       std::span<const double> thresholds) {
  const ProSample one{&grid, &gt};
  return pro_curve(std::span<const ProSample>(&one, 1), thresholds);
}

/// Thresholds at every distinct observed score, or uniform quantiles when
/// there are too many observed voxels.
inline std::vector<double> default_thresholds(std::span<const ProSample> samples, const ProOptions& opt = {}) {
  std::vector<double> s;
  for (const auto& smp : samples)
    for (std::size_t i = 0; i < smp.grid->scores.size(); ++i)
      if (smp.grid->hit_counts[i]) s.push_back(smp.grid->scores[i]);
  std::sort(s.begin(), s.end(), std::greater<>());
  if (s.size() > opt.max_exact && opt.quantiles >= 2) {
    std::vector<double> q;
    for (std::size_t i = 0; i < opt.quantiles; ++i) q.push_back(s[(s.size() - 1) * i / (opt.quantiles - 1)]);
    s = std::move(q);
  }
  s.erase(std::unique(s.begin(), s.end()), s.end());
  return s;
}

inline std::vector<ProPoint> pro_curve(std::span<const ProSample> samples, const ProOptions& opt = {}) {
  const auto t = default_thresholds(samples, opt);
  return pro_curve(samples, t);
}

inline std::vector<ProPoint> pro_curve(const VoxelGrid& grid, const GroundTruthVolume& gt, const ProOptions& opt = {}) {
  const ProSample one{&grid, &gt};
  return pro_curve(std::span<const ProSample>(&one, 1), opt);
}

/// Trapezoidal area under PRO over FPR in [0, limit], normalized by limit.
inline double aupro_at(std::span<const ProPoint> curve, double fpr_limit = 0.01) {
  if (!(fpr_limit > 0)) throw UsageError("fpr_limit must be positive");
  if (curve.empty() || curve.front().fpr > 0) throw UsageError("pro curve must start at fpr 0");
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const auto& a = curve[i - 1];
    const auto& b = curve[i];
    if (a.fpr >= fpr_limit) break;
    if (b.fpr <= fpr_limit) {
      area += 0.5 * (a.pro + b.pro) * (b.fpr - a.fpr);
      if (b.fpr == fpr_limit && (i + 1 == curve.size() || curve[i + 1].fpr > fpr_limit)) return area / fpr_limit;
      continue;
    }
    const double f = (fpr_limit - a.fpr) / (b.fpr - a.fpr);
    const double pro_cap = a.pro + f * (b.pro - a.pro);
    area += 0.5 * (a.pro + pro_cap) * (fpr_limit - a.fpr);
    return area / fpr_limit;
  }
  if (curve.back().fpr < fpr_limit) throw UsageError("pro curve does not reach the fpr limit");
  return area / fpr_limit;
}

} // namespace modmap::metrics

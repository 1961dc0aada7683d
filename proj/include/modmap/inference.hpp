#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "modmap/encoders.hpp"
#include "modmap/error.hpp"
#include "modmap/modmap.hpp"
#include "modmap/nn/loss.hpp"
#include "modmap/parallel.hpp"
#include "modmap/raster.hpp"
#include "modmap/rng.hpp"

namespace modmap {

/// Anomaly maps of both modalities for one (source, target) pair or one view.
struct ModalityMaps {
  Raster image; // Psi_I, h x w
  Raster depth; // Psi_D, h x w
};

/// Per-cell background flags of one view (1 = background).
struct BackgroundMask {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> cells;

  bool any() const { return std::any_of(cells.begin(), cells.end(), [](auto c) { return c != 0; }); }
  std::size_t count() const { return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1)); }
};

inline constexpr double kDefaultBackgroundThreshold = 0.5;

/// A cell is background when the valid fraction of its depth patch is below tau.
inline BackgroundMask background_mask_from_valid(const Raster& valid_fraction, double tau = kDefaultBackgroundThreshold) {
  BackgroundMask m{valid_fraction.height, valid_fraction.width, {}};
  m.cells.resize(valid_fraction.size());
  for (std::size_t i = 0; i < m.cells.size(); ++i) m.cells[i] = double(valid_fraction.values[i]) < tau ? 1 : 0;
  return m;
}

inline BackgroundMask background_mask(const Raster& depth, std::size_t patch_size,
                                      double tau = kDefaultBackgroundThreshold) {
  return background_mask_from_valid(valid_fraction(depth, patch_size), tau);
}

inline void apply_mask(Raster& map, const BackgroundMask& mask) {
  if (map.height != mask.h || map.width != mask.w) throw DimensionMismatch("mask " + std::to_string(mask.h) + "x" +
                                                                           std::to_string(mask.w) + " vs map " + shape_of(map));
  for (std::size_t i = 0; i < map.size(); ++i)
    if (mask.cells[i]) map.values[i] = 0.0f;
}

struct PairAnomaly {
  ModalityMaps maps;
  std::vector<std::uint8_t> degenerate; // positions whose score is undefined
};

/// Psi_D^{s,t} compares depth predicted from the image of s with the depth of t;
/// Psi_I^{s,t} symmetrically. Degenerate positions score 0.
inline PairAnomaly pair_anomaly_maps(const ModMapModel& model, const ViewFeatures& src, const ViewFeatures& tgt,
                                     const ViewCode& s, const ViewCode& t) {
  if (src.image.c != model.dims.c_image || src.depth.c != model.dims.c_depth)
    throw DimensionMismatch("features do not match the model's channel counts");
  const auto pred_depth = map_features(model, Modality::image, feature_matrix<float>(src.image), s, t);
  const auto pred_image = map_features(model, Modality::depth, feature_matrix<float>(src.depth), s, t);
  PairAnomaly out;
  out.maps.image = Raster(tgt.image.h, tgt.image.w);
  out.maps.depth = Raster(tgt.depth.h, tgt.depth.w);
  out.degenerate.assign(tgt.depth.positions(), 0);
  for (std::size_t p = 0; p < tgt.depth.positions(); ++p) {
    const double sd = nn::cosine_distance_or_negative<float>(pred_depth.row(p), tgt.depth.vec(p));
    const double si = nn::cosine_distance_or_negative<float>(pred_image.row(p), tgt.image.vec(p));
    if (sd < 0 || si < 0) out.degenerate[p] = 1;
    out.maps.depth.values[p] = sd < 0 ? 0.0f : float(sd);
    out.maps.image.values[p] = si < 0 ? 0.0f : float(si);
  }
  return out;
}

/// Per-position minimum over the given sources, independently per modality.
inline ModalityMaps ensemble_min(const std::vector<const ModalityMaps*>& sources) {
  if (sources.empty()) throw UsageError("ensemble_min needs at least one source");
  ModalityMaps out = *sources.front();
  for (std::size_t k = 1; k < sources.size(); ++k) {
    const auto& m = *sources[k];
    if (!m.image.same_shape(out.image) || !m.depth.same_shape(out.depth))
      throw DimensionMismatch("ensemble maps differ in shape");
    for (std::size_t i = 0; i < out.image.size(); ++i) out.image.values[i] = std::min(out.image.values[i], m.image.values[i]);
    for (std::size_t i = 0; i < out.depth.size(); ++i) out.depth.values[i] = std::min(out.depth.values[i], m.depth.values[i]);
  }
  return out;
}

enum class SourceMode { cross_view, same_view };

struct InferOptions {
  std::optional<std::size_t> subsample_k;
  std::uint64_t seed = 0;
  SourceMode source_mode = SourceMode::cross_view;
  double background_threshold = kDefaultBackgroundThreshold;
  bool keep_pairs = false; // retain all N x N pair maps (O(N^2) memory)
  std::size_t class_index = 0;
};

struct AnomalyMapSet {
  std::size_t n_views = 0;
  /// per_pair[s][t]; only filled with keep_pairs, and only for used sources.
  std::vector<std::vector<ModalityMaps>> per_pair;
  std::vector<ModalityMaps> per_view;
  std::vector<BackgroundMask> background;
  std::vector<std::size_t> source_views_used;
};

/// Source views for an inference: all of them, or a seeded draw of k made
/// once per sample and shared by every target.
inline std::vector<std::size_t> select_sources(std::size_t n_views, const InferOptions& opt) {
  if (!opt.subsample_k || *opt.subsample_k == n_views) {
    std::vector<std::size_t> all(n_views);
    for (std::size_t i = 0; i < n_views; ++i) all[i] = i;
    return all;
  }
  const std::size_t k = *opt.subsample_k;
  if (k < 1 || k > n_views)
    throw UsageError("subsample_k=" + std::to_string(k) + " outside [1, " + std::to_string(n_views) + "]");
  Rng rng(derive_seed(opt.seed, 7));
  auto perm = rng.permutation(n_views);
  perm.resize(k);
  std::sort(perm.begin(), perm.end());
  return perm;
}

inline AnomalyMapSet infer_views(const ModMapModel& model, const std::vector<ViewFeatures>& views,
                                 const InferOptions& opt = {}) {
  const std::size_t n = views.size();
  if (n != model.dims.n_views)
    throw DataError("sample has " + std::to_string(n) + " views, model expects " + std::to_string(model.dims.n_views));
  AnomalyMapSet out;
  out.n_views = n;
  out.source_views_used = select_sources(n, opt);
  out.per_view.resize(n);
  out.background.resize(n);
  if (opt.keep_pairs) out.per_pair.assign(n, std::vector<ModalityMaps>(n));

  parallel_for(n, [&](std::size_t t) {
    const ViewCode code_t = model.code(t, opt.class_index);
    std::vector<std::size_t> sources = out.source_views_used;
    if (opt.source_mode == SourceMode::same_view) sources = {t};
    BackgroundMask mask = background_mask_from_valid(views[t].valid, opt.background_threshold);
    ModalityMaps running;
    bool first = true;
    for (std::size_t s : sources) {
      PairAnomaly pa = pair_anomaly_maps(model, views[s], views[t], model.code(s, opt.class_index), code_t);
      for (std::size_t p = 0; p < pa.degenerate.size(); ++p)
        if (pa.degenerate[p]) mask.cells[p] = 1;
      if (first) {
        running = pa.maps;
        first = false;
      } else {
        running = ensemble_min({&running, &pa.maps});
      }
      if (opt.keep_pairs) out.per_pair[s][t] = std::move(pa.maps);
    }
    apply_mask(running.image, mask);
    apply_mask(running.depth, mask);
    out.per_view[t] = std::move(running);
    out.background[t] = std::move(mask);
  });
  return out;
}

} // namespace modmap

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "modmap/metrics.hpp"
#include "modmap/rng.hpp"

using namespace modmap;
using namespace modmap::metrics;

namespace {

double auroc_pairs(const std::vector<double>& s, const std::vector<int>& l) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (l[i] == 1 && l[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

std::vector<std::size_t> union_find_labels(const std::vector<std::uint8_t>& mask, const Dims3& d) {
  std::vector<std::size_t> parent(mask.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  auto idx = [&](long x, long y, long z) { return (std::size_t(x) * d[1] + std::size_t(y)) * d[2] + std::size_t(z); };
  for (long x = 0; x < long(d[0]); ++x)
    for (long y = 0; y < long(d[1]); ++y)
      for (long z = 0; z < long(d[2]); ++z) {
        if (!mask[idx(x, y, z)]) continue;
        for (long dx = -1; dx <= 1; ++dx)
          for (long dy = -1; dy <= 1; ++dy)
            for (long dz = -1; dz <= 1; ++dz) {
              const long nx = x + dx, ny = y + dy, nz = z + dz;
              if (nx < 0 || ny < 0 || nz < 0 || nx >= long(d[0]) || ny >= long(d[1]) || nz >= long(d[2])) continue;
              if (mask[idx(nx, ny, nz)]) parent[find(idx(x, y, z))] = find(idx(nx, ny, nz));
            }
      }
  std::vector<std::size_t> roots(mask.size(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) roots[i] = find(i) + 1;
  return roots;
}

VoxelGrid random_grid(const Dims3& d, Rng& rng, double observed_fraction = 0.8) {
  GridSpec s;
  s.dims = d;
  VoxelGrid g(s);
  for (std::size_t i = 0; i < g.scores.size(); ++i) {
    if (rng.uniform() > observed_fraction) continue;
    g.hit_counts[i] = 1;
    // Coarse values so that ties occur.
    g.scores[i] = float(std::floor(rng.uniform() * 40) / 40);
  }
  return g;
}

std::vector<std::uint8_t> blob_mask(const Dims3& d, Rng& rng, int blobs) {
  std::vector<std::uint8_t> m(d[0] * d[1] * d[2], 0);
  for (int b = 0; b < blobs; ++b) {
    const double cx = rng.uniform(0, double(d[0])), cy = rng.uniform(0, double(d[1])), cz = rng.uniform(0, double(d[2]));
    const double r = rng.uniform(1.0, 2.2);
    for (std::size_t x = 0; x < d[0]; ++x)
      for (std::size_t y = 0; y < d[1]; ++y)
        for (std::size_t z = 0; z < d[2]; ++z)
          if (std::hypot(double(x) - cx, double(y) - cy, double(z) - cz) <= r) m[(x * d[1] + y) * d[2] + z] = 1;
  }
  return m;
}

// Brute force: recompute PRO and FPR from scratch at each threshold.
ProPoint brute_point(const VoxelGrid& g, const std::vector<std::size_t>& regions, double tau) {
  std::map<std::size_t, std::pair<double, double>> per_region; // hits, size
  double fp = 0, nominal = 0;
  for (std::size_t i = 0; i < g.scores.size(); ++i) {
    if (!g.hit_counts[i]) continue;
    const bool pred = g.scores[i] >= tau;
    if (regions[i]) {
      per_region[regions[i]].second += 1;
      per_region[regions[i]].first += pred;
    } else {
      nominal += 1;
      fp += pred;
    }
  }
  double pro = 0;
  for (const auto& [r, hs] : per_region) pro += hs.first / hs.second;
  return {tau, fp / nominal, pro / double(per_region.size())};
}

double brute_aupro(const VoxelGrid& g, const std::vector<std::size_t>& regions, double limit) {
  std::vector<double> taus;
  for (std::size_t i = 0; i < g.scores.size(); ++i)
    if (g.hit_counts[i]) taus.push_back(g.scores[i]);
  std::sort(taus.begin(), taus.end(), std::greater<>());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
  for (double t : taus) {
    const auto p = brute_point(g, regions, t);
    pts.push_back({p.fpr, p.pro});
  }
  double area = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const auto [f0, p0] = pts[i - 1];
    const auto [f1, p1] = pts[i];
    if (f0 >= limit) break;
    const double hi = std::min(f1, limit);
    const double p_hi = f1 == f0 ? p1 : p0 + (p1 - p0) * (hi - f0) / (f1 - f0);
    area += 0.5 * (p0 + p_hi) * (hi - f0);
  }
  return area / limit;
}

} // namespace

TEST(Auroc, Examples) {
  const std::vector<double> s{0.9, 0.1};
  const std::vector<int> l{1, 0};
  EXPECT_EQ(auroc(s, l), 1.0);
  const std::vector<double> tied(6, 0.3);
  const std::vector<int> lt{1, 0, 1, 0, 0, 1};
  EXPECT_EQ(auroc(tied, lt), 0.5);
  const std::vector<int> one_class{1, 1};
  EXPECT_THROW(auroc(s, one_class), DataError);
  const std::vector<int> short_labels{1};
  EXPECT_THROW(auroc(s, short_labels), DimensionMismatch);
}

TEST(Auroc, MatchesPairCounting) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.index(99);
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = std::floor(rng.uniform() * 20) / 20;
      l[i] = int(rng.index(2));
    }
    l[0] = 0;
    l[1] = 1;
    EXPECT_EQ(auroc(s, l), auroc_pairs(s, l)) << trial;
  }
}

TEST(Auroc, InvariantUnderIncreasingTransforms) {
  Rng rng(2);
  std::vector<double> s(40), t(40);
  std::vector<int> l(40);
  for (std::size_t i = 0; i < 40; ++i) {
    s[i] = rng.uniform();
    l[i] = int(i % 3 == 0);
    t[i] = std::exp(3 * s[i]) + 2;
  }
  EXPECT_EQ(auroc(s, l), auroc(t, l));
}

TEST(Auroc, NullDistribution) {
  // 10 defective vs 6 nominal instances with exchangeable scores: mean 0.5,
  // sd sqrt((n1 + n0 + 1) / (12 n1 n0)) = sqrt(17 / 720).
  Rng rng(3);
  const int trials = 4000;
  double sum = 0, sum2 = 0;
  std::vector<int> l{0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1};
  std::vector<double> s(16);
  for (int t = 0; t < trials; ++t) {
    for (auto& v : s) v = rng.uniform();
    const double a = auroc(s, l);
    sum += a;
    sum2 += a * a;
  }
  const double mean = sum / trials, sd = std::sqrt(sum2 / trials - mean * mean);
  const double expected_sd = std::sqrt(17.0 / 720.0);
  EXPECT_NEAR(mean, 0.5, 4 * expected_sd / std::sqrt(double(trials)));
  EXPECT_NEAR(sd, expected_sd, 0.05 * expected_sd);
}

TEST(ConnectedComponents, Examples) {
  std::vector<std::uint8_t> m(27, 0);
  m[0] = 1;  // (0,0,0)
  m[13] = 1; // (1,1,1), diagonal neighbour
  EXPECT_EQ(connected_components(m, {3, 3, 3}).count, 1u);
  std::vector<std::uint8_t> gap(27, 0);
  gap[0] = 1;
  gap[2] = 1; // (0,0,2)
  const auto lab = connected_components(gap, {3, 3, 3});
  EXPECT_EQ(lab.count, 2u);
  EXPECT_EQ(lab.labels[0], 1u);
  EXPECT_EQ(lab.labels[2], 2u);
  EXPECT_THROW(connected_components(gap, {3, 3, 2}), DimensionMismatch);
}

TEST(ConnectedComponents, MatchesUnionFind) {
  Rng rng(4);
  const Dims3 d{8, 8, 8};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::uint8_t> m(512);
    const double p = rng.uniform(0.05, 0.3);
    for (auto& v : m) v = rng.uniform() < p;
    const auto lab = connected_components(m, d);
    const auto ref = union_find_labels(m, d);
    // Same partition: a bijection between label sets.
    std::map<std::size_t, std::uint32_t> fwd;
    std::map<std::uint32_t, std::size_t> back;
    for (std::size_t i = 0; i < m.size(); ++i) {
      ASSERT_EQ(ref[i] == 0, lab.labels[i] == 0);
      if (!ref[i]) continue;
      auto [it, fresh] = fwd.emplace(ref[i], lab.labels[i]);
      ASSERT_EQ(it->second, lab.labels[i]);
      auto [jt, fresh2] = back.emplace(lab.labels[i], ref[i]);
      ASSERT_EQ(jt->second, ref[i]);
    }
    EXPECT_EQ(fwd.size(), lab.count);
  }
}

TEST(ProCurve, Examples) {
  GridSpec s;
  s.dims = {4, 4, 4};
  VoxelGrid g(s);
  std::fill(g.hit_counts.begin(), g.hit_counts.end(), 1);
  std::vector<std::uint8_t> mask(64, 0);
  for (std::size_t i : {0, 1, 40}) {
    mask[i] = 1;
    g.scores[i] = 0.9f;
  }
  const auto gt = GroundTruthVolume::from_mask(mask, s.dims);
  ASSERT_EQ(gt.regions, 2u);
  const std::vector<double> taus{double(0.9f), -1.0};
  const auto curve = pro_curve(g, gt, taus);
  ASSERT_EQ(curve.size(), 3u);
  EXPECT_EQ(curve[1].fpr, 0.0);
  EXPECT_EQ(curve[1].pro, 1.0);
  EXPECT_EQ(curve[2].fpr, 1.0);
  EXPECT_EQ(curve[2].pro, 1.0);
  EXPECT_EQ(aupro_at(curve), 1.0);

  const std::vector<double> rising{0.5, 0.9};
  EXPECT_THROW(pro_curve(g, gt, rising), UsageError);
  const auto empty = GroundTruthVolume::from_mask(std::vector<std::uint8_t>(64, 0), s.dims);
  EXPECT_THROW(pro_curve(g, empty, taus), DataError);
}

TEST(ProCurve, UnobservedVoxelsAreIgnored) {
  GridSpec s;
  s.dims = {2, 2, 2};
  VoxelGrid g(s);
  std::vector<std::uint8_t> mask(8, 0);
  mask[0] = 1;
  g.hit_counts[0] = g.hit_counts[1] = g.hit_counts[2] = 1;
  g.scores = {0.8f, 0.9f, 0.1f, 0.95f, 0.95f, 0.95f, 0.95f, 0.95f};
  const auto curve = pro_curve(g, GroundTruthVolume::from_mask(mask, s.dims));
  // Thresholds 0.9, 0.8, 0.1 over the three observed voxels only.
  ASSERT_EQ(curve.size(), 4u);
  EXPECT_EQ(curve[1].fpr, 0.5);
  EXPECT_EQ(curve[1].pro, 0.0);
  EXPECT_EQ(curve[2].pro, 1.0);
}

TEST(ProCurve, MatchesBruteForceOn8Cubed) {
  Rng rng(5);
  const Dims3 d{8, 8, 8};
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_grid(d, rng);
    const auto mask = blob_mask(d, rng, 2);
    const auto gt = GroundTruthVolume::from_mask(mask, d);
    const auto regions = union_find_labels(mask, d);
    const auto curve = pro_curve(g, gt);
    for (std::size_t i = 1; i < curve.size(); ++i) {
      const auto ref = brute_point(g, regions, curve[i].threshold);
      ASSERT_NEAR(curve[i].fpr, ref.fpr, 1e-12);
      ASSERT_NEAR(curve[i].pro, ref.pro, 1e-12);
    }
    for (double limit : {0.01, 0.05, 0.3, 1.0})
      EXPECT_NEAR(aupro_at(curve, limit), brute_aupro(g, regions, limit), 1e-9) << trial << " @" << limit;
  }
}

TEST(ProCurve, PooledSamplesCountRegionsSeparately) {
  Rng rng(6);
  const Dims3 d{6, 6, 6};
  const auto g1 = random_grid(d, rng), g2 = random_grid(d, rng);
  const auto m1 = blob_mask(d, rng, 1), m2 = blob_mask(d, rng, 1);
  const auto gt1 = GroundTruthVolume::from_mask(m1, d), gt2 = GroundTruthVolume::from_mask(m2, d);
  const std::vector<ProSample> both{{&g1, &gt1}, {&g2, &gt2}};
  const auto curve = pro_curve(both);

  const auto r1 = union_find_labels(m1, d), r2 = union_find_labels(m2, d);
  const std::size_t n1 = *std::max_element(r1.begin(), r1.end());
  for (std::size_t i = 1; i < curve.size(); ++i) {
    double fp = 0, nominal = 0;
    for (const auto* pair : {&both[0], &both[1]})
      for (std::size_t v = 0; v < 216; ++v)
        if (pair->grid->hit_counts[v] && !pair->gt->mask[v]) {
          nominal += 1;
          fp += pair->grid->scores[v] >= curve[i].threshold;
        }
    EXPECT_NEAR(curve[i].fpr, fp / nominal, 1e-12);
    // Regions of the second sample are numbered after those of the first.
    std::map<std::size_t, std::pair<double, double>> hit;
    for (std::size_t v = 0; v < 216; ++v) {
      if (g1.hit_counts[v] && r1[v]) {
        hit[r1[v]].second += 1;
        hit[r1[v]].first += g1.scores[v] >= curve[i].threshold;
      }
      if (g2.hit_counts[v] && r2[v]) {
        hit[n1 + r2[v]].second += 1;
        hit[n1 + r2[v]].first += g2.scores[v] >= curve[i].threshold;
      }
    }
    double pro = 0;
    for (const auto& [r, hs] : hit) pro += hs.first / hs.second;
    EXPECT_NEAR(curve[i].pro, pro / double(hit.size()), 1e-12);
  }
}

TEST(Aupro, Examples) {
  const std::vector<ProPoint> ones{{1, 0.0, 1.0}, {0, 0.01, 1.0}};
  EXPECT_DOUBLE_EQ(aupro_at(ones), 1.0);
  const std::vector<ProPoint> zeros{{1, 0.0, 0.0}, {0, 0.5, 0.0}};
  EXPECT_EQ(aupro_at(zeros), 0.0);
  const std::vector<ProPoint> triangle{{1, 0.0, 0.0}, {0, 0.01, 1.0}};
  EXPECT_DOUBLE_EQ(aupro_at(triangle), 0.5);
  EXPECT_THROW(aupro_at(triangle, 0.0), UsageError);
  const std::vector<ProPoint> short_curve{{1, 0.0, 0.0}, {0, 0.005, 1.0}};
  EXPECT_THROW(aupro_at(short_curve), UsageError);
}

TEST(Aupro, MonotoneInLimitAndScaleInvariant) {
  Rng rng(7);
  const Dims3 d{8, 8, 8};
  auto g = random_grid(d, rng);
  const auto gt = GroundTruthVolume::from_mask(blob_mask(d, rng, 2), d);
  const auto curve = pro_curve(g, gt);
  double prev = 0;
  for (double limit = 0.01; limit <= 1.0; limit += 0.01) {
    const double a = aupro_at(curve, limit);
    EXPECT_GE(a, prev - 1e-12);
    prev = a;
  }
  for (auto& v : g.scores) v *= 3.5f;
  const auto scaled = pro_curve(g, gt);
  ASSERT_EQ(scaled.size(), curve.size());
  for (std::size_t i = 0; i < curve.size(); ++i) {
    EXPECT_EQ(scaled[i].fpr, curve[i].fpr);
    EXPECT_EQ(scaled[i].pro, curve[i].pro);
  }
}

TEST(DefaultThresholds, QuantileFallback) {
  Rng rng(8);
  GridSpec s;
  s.dims = {10, 10, 10};
  VoxelGrid g(s);
  for (std::size_t i = 0; i < 1000; ++i) {
    g.hit_counts[i] = 1;
    g.scores[i] = float(rng.uniform());
  }
  GroundTruthVolume gt = GroundTruthVolume::from_mask(std::vector<std::uint8_t>(1000, 0), s.dims);
  const ProSample one{&g, &gt};
  ProOptions opt;
  opt.max_exact = 100;
  opt.quantiles = 16;
  const auto t = default_thresholds(std::span<const ProSample>(&one, 1), opt);
  EXPECT_LE(t.size(), 16u);
  EXPECT_EQ(t.front(), *std::max_element(g.scores.begin(), g.scores.end()));
  EXPECT_EQ(t.back(), *std::min_element(g.scores.begin(), g.scores.end()));
  EXPECT_EQ(default_thresholds(std::span<const ProSample>(&one, 1)).size(), 1000u);
}

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "modmap/error.hpp"
#include "modmap/nn/adam.hpp"
#include "modmap/nn/loss.hpp"
#include "modmap/nn/mlp.hpp"
#include "modmap/nn/schedule.hpp"
#include "modmap/rng.hpp"

using namespace modmap;
using namespace modmap::nn;

namespace {

BasicMatrix<double> random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  BasicMatrix<double> m(r, c);
  for (auto& v : m.flat()) v = rng.uniform(-1, 1);
  return m;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)}); }

// Scalar-loop evaluation of a GeLU MLP, written without the matrix helpers.
std::vector<double> scalar_forward(const BasicMlp<double>& net, std::vector<double> x) {
  for (std::size_t k = 0; k < net.depth(); ++k) {
    const auto& l = net.layers()[k];
    std::vector<double> y(l.out_dim());
    for (std::size_t o = 0; o < l.out_dim(); ++o) {
      double s = l.bias[o];
      for (std::size_t i = 0; i < l.in_dim(); ++i) s += l.weight(o, i) * x[i];
      if (k + 1 < net.depth()) s = 0.5 * s * (1 + std::tanh(std::sqrt(2 / std::numbers::pi) * (s + 0.044715 * s * s * s)));
      y[o] = s;
    }
    x = std::move(y);
  }
  return x;
}

// sum_k c_k * out_k for a fixed random c: a scalar with a known output gradient.
double weighted_sum(const BasicMlp<double>& net, const BasicMatrix<double>& x, const BasicMatrix<double>& c) {
  const auto y = net.forward(x);
  double s = 0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.flat()[i] * c.flat()[i];
  return s;
}

} // namespace

TEST(Gelu, Examples) {
  EXPECT_EQ(gelu(0.0), 0.0);
  EXPECT_NEAR(gelu(1.0), 0.8411919906082768, 1e-12);
  EXPECT_LT(std::abs(gelu(-10.0)), 1e-6);
}

TEST(Gelu, DerivativeMatchesFiniteDifference) {
  for (double x = -4; x <= 4; x += 0.37) {
    const double h = 1e-5;
    EXPECT_NEAR(gelu_derivative(x), (gelu(x + h) - gelu(x - h)) / (2 * h), 1e-8) << x;
  }
}

TEST(Mlp, ZeroNetGivesZero) {
  BasicMlp<double> net({3, 5, 2});
  Rng rng(1);
  const auto y = net.forward(random_matrix(rng, 4, 3));
  for (double v : y.flat()) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, IdentityLayerPassesInputThrough) {
  DenseLayer<double> l(3, 3);
  l.weight = BasicMatrix<double>::identity(3);
  BasicMlp<double> net(std::vector<DenseLayer<double>>{l});
  Rng rng(2);
  const auto x = random_matrix(rng, 5, 3);
  EXPECT_EQ(net.forward(x), x);
}

TEST(Mlp, MatchesScalarLoopOracle) {
  Rng rng(3);
  BasicMlp<double> net({4, 6, 3});
  net.init_uniform(rng);
  const auto x = random_matrix(rng, 3, 4);
  const auto y = net.forward(x);
  for (std::size_t r = 0; r < 3; ++r) {
    const auto expect = scalar_forward(net, {x.row(r).begin(), x.row(r).end()});
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(y(r, c), expect[c], 1e-12);
  }
}

TEST(Mlp, DimensionMismatchIsReported) {
  BasicMlp<double> net({4, 2});
  EXPECT_THROW(net.forward(BasicMatrix<double>(1, 3)), DimensionMismatch);
  EXPECT_THROW(BasicMlp<double>(std::vector<std::size_t>{4}), DimensionMismatch);
}

TEST(MlpBackward, ZeroOutputGradientGivesZeroGradients) {
  Rng rng(4);
  BasicMlp<double> net({3, 4, 2});
  net.init_uniform(rng);
  MlpCache<double> cache;
  net.forward(random_matrix(rng, 5, 3), &cache);
  const auto g = net.backward(cache, BasicMatrix<double>(5, 2));
  for (const auto& l : g.layers) {
    for (double v : l.weight.flat()) EXPECT_EQ(v, 0.0);
    for (double v : l.bias) EXPECT_EQ(v, 0.0);
  }
  for (double v : g.input.flat()) EXPECT_EQ(v, 0.0);
}

TEST(MlpBackward, LinearSumLossGivesColumnSums) {
  Rng rng(5);
  BasicMlp<double> net({3, 2});
  net.init_uniform(rng);
  const auto x = random_matrix(rng, 6, 3);
  MlpCache<double> cache;
  net.forward(x, &cache);
  const auto g = net.backward(cache, BasicMatrix<double>(6, 2, 1.0));
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 3; ++i) {
      double col = 0;
      for (std::size_t r = 0; r < 6; ++r) col += x(r, i);
      EXPECT_NEAR(g.layers[0].weight(o, i), col, 1e-12);
    }
}

TEST(MlpBackward, StaleCacheIsRejected) {
  Rng rng(6);
  BasicMlp<double> net({3, 4, 2});
  net.init_uniform(rng);
  MlpCache<double> cache;
  net.forward(random_matrix(rng, 2, 3), &cache);
  net.mutable_layers();
  EXPECT_THROW(net.backward(cache, BasicMatrix<double>(2, 2)), DataError);
}

// Property: random nets of <= 3 layers and dims <= 16 match central differences.
TEST(MlpBackward, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t depth = 1 + rng.index(3);
    std::vector<std::size_t> dims{1 + rng.index(16)};
    for (std::size_t k = 0; k < depth; ++k) dims.push_back(1 + rng.index(16));
    BasicMlp<double> net(dims);
    net.init_uniform(rng);
    const std::size_t batch = 1 + rng.index(4);
    auto x = random_matrix(rng, batch, dims.front());
    const auto c = random_matrix(rng, batch, dims.back());
    MlpCache<double> cache;
    net.forward(x, &cache);
    const auto g = net.backward(cache, c);
    const double h = 1e-3;
    double worst = 0;
    for (std::size_t k = 0; k < net.depth(); ++k) {
      const std::size_t nw = net.layers()[k].weight.size(), nb = net.layers()[k].bias.size();
      for (std::size_t i = 0; i < nw + nb; ++i) {
        auto at = [&]() -> double& {
          auto& l = net.mutable_layers()[k];
          return i < nw ? l.weight.flat()[i] : l.bias[i - nw];
        };
        const double orig = at();
        at() = orig + h;
        const double up = weighted_sum(net, x, c);
        at() = orig - h;
        const double dn = weighted_sum(net, x, c);
        at() = orig;
        const double analytic = i < nw ? g.layers[k].weight.flat()[i] : g.layers[k].bias[i - nw];
        worst = std::max(worst, rel_err(analytic, (up - dn) / (2 * h)));
      }
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x.flat()[i];
      x.flat()[i] = orig + h;
      const double up = weighted_sum(net, x, c);
      x.flat()[i] = orig - h;
      const double dn = weighted_sum(net, x, c);
      x.flat()[i] = orig;
      worst = std::max(worst, rel_err(g.input.flat()[i], (up - dn) / (2 * h)));
    }
    EXPECT_LT(worst, 1e-4) << "trial " << trial;
  }
}

TEST(Cosine, Examples) {
  const std::vector<double> x{0.3, -1.2, 2.0};
  // eps = 1e-8 is added to each norm, so self-distance is 1 - n^2 / (n + eps)^2.
  const double n = std::sqrt(0.09 + 1.44 + 4.0);
  EXPECT_NEAR(cosine_distance<double>(x, x).distance, 1.0 - n * n / ((n + 1e-8) * (n + 1e-8)), 1e-13);
  const std::vector<double> e0{1, 0}, e1{0, 1};
  EXPECT_NEAR(cosine_distance<double>(e0, e1).distance, 1.0, 1e-12);
  const std::vector<double> neg{-0.3, 1.2, -2.0};
  const auto r = cosine_distance<double>(x, neg);
  EXPECT_NEAR(r.distance, 2.0, 1e-7);
}

TEST(Cosine, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(1 + rng.index(10)), y(x.size());
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : y) v = rng.uniform(-1, 1);
    if (trial == 0) for (std::size_t i = 0; i < x.size(); ++i) y[i] = -x[i];
    const auto r = cosine_distance<double>(x, y);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double h = 1e-6, orig = x[i];
      x[i] = orig + h;
      const double up = cosine_distance<double>(x, y, false).distance;
      x[i] = orig - h;
      const double dn = cosine_distance<double>(x, y, false).distance;
      x[i] = orig;
      EXPECT_NEAR(r.grad_x[i], (up - dn) / (2 * h), 1e-5);
    }
  }
}

TEST(Cosine, RangeProperty) {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> x(1 + rng.index(8)), y(x.size());
    for (auto& v : x) v = rng.uniform(-5, 5);
    for (auto& v : y) v = rng.uniform(-5, 5);
    const double d = cosine_distance<double>(x, y, false).distance;
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 2.0);
  }
}

TEST(Cosine, DegenerateNormAndLengthMismatch) {
  const std::vector<double> z{0, 0, 0}, x{1, 2, 3}, w{1, 2};
  EXPECT_THROW(cosine_distance<double>(z, x), DegenerateNorm);
  EXPECT_THROW(cosine_distance<double>(x, w), DimensionMismatch);
  EXPECT_LT(cosine_distance_or_negative<double>(z, x), 0);
}

TEST(Adam, ZeroGradientLeavesParametersAndCountsStep) {
  std::vector<float> p{0.5f, -1.0f};
  const std::vector<float> g{0, 0};
  std::vector<std::span<float>> ps{p};
  std::vector<std::span<const float>> gs{g};
  AdamState st;
  adam_step<float>(ps, gs, st, 0.1);
  EXPECT_EQ(p[0], 0.5f);
  EXPECT_EQ(p[1], -1.0f);
  EXPECT_EQ(st.step_count, 1u);
}

TEST(Adam, FirstStepIsMinusLearningRate) {
  // m = 0.1, v = 0.001; bias-corrected mhat = 1, vhat = 1, step = -lr / (1 + eps).
  std::vector<double> p{0.0};
  const std::vector<double> g{1.0};
  std::vector<std::span<double>> ps{p};
  std::vector<std::span<const double>> gs{g};
  AdamState st;
  adam_step<double>(ps, gs, st, 0.1);
  EXPECT_LT(std::abs(p[0] + 0.1), 1e-6);
}

TEST(Adam, NonFiniteGradientIsRejectedWithName) {
  std::vector<double> p{1.0, 2.0};
  const std::vector<double> g{0.0, std::nan("")};
  std::vector<std::span<double>> ps{p};
  std::vector<std::span<const double>> gs{g};
  AdamState st;
  const std::vector<std::string> names{"map.layer0.weight"};
  try {
    adam_step<double>(ps, gs, st, 0.1, names);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("map.layer0.weight"), std::string::npos);
  }
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(st.step_count, 0u);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    Rng rng(10);
    std::vector<float> p(7);
    for (auto& v : p) v = float(rng.uniform(-1, 1));
    AdamState st;
    for (int s = 0; s < 20; ++s) {
      std::vector<float> g(7);
      for (auto& v : g) v = float(rng.uniform(-1, 1));
      std::vector<std::span<float>> ps{p};
      std::vector<std::span<const float>> gs{g};
      adam_step<float>(ps, gs, st, 0.01);
    }
    return p;
  };
  EXPECT_EQ(run(), run());
}

TEST(Schedule, Endpoints) {
  OneCycleSchedule s;
  s.total_steps = 400;
  EXPECT_DOUBLE_EQ(lr_at(s, 0), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(s, s.warmup_steps()), 5e-4);
  EXPECT_EQ(s.warmup_steps(), 40u);
  EXPECT_NEAR(lr_at(s, s.total_steps), s.lr_final, 1e-18);
  EXPECT_THROW(lr_at(s, 401), UsageError);
}

TEST(Schedule, MaximumAttainedOnceAndContinuous) {
  OneCycleSchedule s;
  s.total_steps = 1000;
  int at_max = 0;
  double prev = lr_at(s, 0);
  for (std::uint64_t k = 0; k <= s.total_steps; ++k) {
    const double lr = lr_at(s, k);
    EXPECT_LE(lr, s.lr_max);
    if (lr == s.lr_max) ++at_max;
    EXPECT_LT(std::abs(lr - prev), 2e-5);
    prev = lr;
  }
  EXPECT_EQ(at_max, 1);
}

TEST(Schedule, Validation) {
  OneCycleSchedule s;
  s.warmup_fraction = 1.0;
  EXPECT_THROW(s.validate(), UsageError);
  s.warmup_fraction = 0.1;
  s.lr_init = 1e-3;
  EXPECT_THROW(s.validate(), UsageError);
}

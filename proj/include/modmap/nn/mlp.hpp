#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "modmap/nn/matrix.hpp"
#include "modmap/rng.hpp"

namespace modmap::nn {

// tanh approximation of GeLU.
template <typename T>
T gelu(T x) {
  constexpr T k = static_cast<T>(0.7978845608028654); // sqrt(2/pi)
  constexpr T a = static_cast<T>(0.044715);
  return T{0.5} * x * (T{1} + std::tanh(k * (x + a * x * x * x)));
}

template <typename T>
T gelu_derivative(T x) {
  constexpr T k = static_cast<T>(0.7978845608028654);
  constexpr T a = static_cast<T>(0.044715);
  const T u = k * (x + a * x * x * x);
  const T th = std::tanh(u);
  const T du = k * (T{1} + T{3} * a * x * x);
  return T{0.5} * (T{1} + th) + T{0.5} * x * (T{1} - th * th) * du;
}

template <typename T>
struct DenseLayer {
  BasicMatrix<T> weight; // out x in
  std::vector<T> bias;   // out

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out) : weight(out, in), bias(out, T{0}) {}

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

template <typename T>
struct MlpCache {
  std::uint64_t revision = 0;
  std::vector<BasicMatrix<T>> inputs;         // input of every layer
  std::vector<BasicMatrix<T>> pre_activation; // pre-activation of every hidden layer
};

template <typename T>
struct MlpGradients {
  std::vector<DenseLayer<T>> layers;
  BasicMatrix<T> input;
};

/// Dense network with GeLU between layers and an identity output.
template <typename T>
class BasicMlp {
public:
  BasicMlp() = default;

  /// dims = {in, hidden..., out}; parameters start at zero.
  explicit BasicMlp(const std::vector<std::size_t>& dims) {
    if (dims.size() < 2) throw DimensionMismatch("an mlp needs at least input and output dims");
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) layers_.emplace_back(dims[k], dims[k + 1]);
  }

  explicit BasicMlp(std::vector<DenseLayer<T>> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw DimensionMismatch("an mlp needs at least one layer");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      if (layers_[k].bias.size() != layers_[k].out_dim())
        throw DimensionMismatch("layer " + std::to_string(k) + " bias length");
      if (k > 0 && layers_[k].in_dim() != layers_[k - 1].out_dim())
        throw DimensionMismatch("layer " + std::to_string(k) + " input " +
                                std::to_string(layers_[k].in_dim()) + " != previous output " +
                                std::to_string(layers_[k - 1].out_dim()));
    }
  }

  /// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) for every weight and bias.
  void init_uniform(Rng& rng) {
    ++revision_;
    for (auto& layer : layers_) {
      const double bound = std::sqrt(1.0 / static_cast<double>(layer.in_dim()));
      for (auto& w : layer.weight.flat()) w = static_cast<T>(rng.uniform(-bound, bound));
      for (auto& b : layer.bias) b = static_cast<T>(rng.uniform(-bound, bound));
    }
  }

  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }
  std::size_t depth() const noexcept { return layers_.size(); }
  std::uint64_t revision() const noexcept { return revision_; }

  const std::vector<DenseLayer<T>>& layers() const noexcept { return layers_; }

  /// Mutable access invalidates any cache produced by an earlier forward pass.
  std::vector<DenseLayer<T>>& mutable_layers() noexcept {
    ++revision_;
    return layers_;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d{in_dim()};
    for (const auto& l : layers_) d.push_back(l.out_dim());
    return d;
  }

  BasicMatrix<T> forward(const BasicMatrix<T>& input, MlpCache<T>* cache = nullptr) const {
    if (input.cols() != in_dim())
      throw DimensionMismatch("mlp input has " + std::to_string(input.cols()) +
                              " columns, expected " + std::to_string(in_dim()));
    if (cache) {
      cache->revision = revision_;
      cache->inputs.clear();
      cache->pre_activation.clear();
    }
    BasicMatrix<T> x = input;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& layer = layers_[k];
      BasicMatrix<T> z = matmul_transposed(x, layer.weight);
      for (std::size_t r = 0; r < z.rows(); ++r) {
        auto zr = z.row(r);
        for (std::size_t c = 0; c < zr.size(); ++c) zr[c] += layer.bias[c];
      }
      if (cache) cache->inputs.push_back(std::move(x));
      if (k + 1 < layers_.size()) {
        if (cache) cache->pre_activation.push_back(z);
        for (auto& v : z.flat()) v = gelu(v);
      }
      x = std::move(z);
    }
    return x;
  }

  MlpGradients<T> backward(const MlpCache<T>& cache, const BasicMatrix<T>& output_gradient) const {
    if (cache.revision != revision_ || cache.inputs.size() != layers_.size() ||
        cache.pre_activation.size() + 1 != layers_.size())
      throw DataError("stale or mismatched mlp cache");
    const std::size_t batch = cache.inputs.front().rows();
    if (output_gradient.rows() != batch || output_gradient.cols() != out_dim())
      throw DimensionMismatch("output gradient " +
                              shape_string(output_gradient.rows(), output_gradient.cols()) +
                              " vs expected " + shape_string(batch, out_dim()));

    MlpGradients<T> grads;
    grads.layers.resize(layers_.size());
    BasicMatrix<T> delta = output_gradient;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const auto& layer = layers_[k];
      if (k + 1 < layers_.size()) {
        const auto& z = cache.pre_activation[k];
        auto d = delta.flat();
        const auto zf = z.flat();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] *= gelu_derivative(zf[i]);
      }
      auto& g = grads.layers[k];
      g.weight = BasicMatrix<T>(layer.out_dim(), layer.in_dim());
      g.bias.assign(layer.out_dim(), T{0});
      add_transposed_product(g.weight, delta, cache.inputs[k]);
      for (std::size_t r = 0; r < delta.rows(); ++r) {
        const auto dr = delta.row(r);
        for (std::size_t c = 0; c < dr.size(); ++c) g.bias[c] += dr[c];
      }
      delta = matmul(delta, layer.weight);
    }
    grads.input = std::move(delta);
    return grads;
  }

  friend bool operator==(const BasicMlp& a, const BasicMlp& b) { return a.layers_ == b.layers_; }

private:
  std::vector<DenseLayer<T>> layers_;
  std::uint64_t revision_ = 0;
};

using Mlp = BasicMlp<float>;

template <typename T>
void accumulate(MlpGradients<T>& acc, const MlpGradients<T>& g) {
  if (acc.layers.empty()) {
    acc.layers = g.layers;
    return;
  }
  for (std::size_t k = 0; k < acc.layers.size(); ++k) {
    auto a = acc.layers[k].weight.flat();
    const auto b = g.layers[k].weight.flat();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    for (std::size_t i = 0; i < acc.layers[k].bias.size(); ++i) acc.layers[k].bias[i] += g.layers[k].bias[i];
  }
}

/// Flat parameter views in a fixed order: per layer, weights then bias.
template <typename T>
std::vector<std::span<T>> parameter_spans(BasicMlp<T>& net) {
  std::vector<std::span<T>> out;
  for (auto& l : net.mutable_layers()) {
    out.push_back(l.weight.flat());
    out.emplace_back(l.bias);
  }
  return out;
}

template <typename T>
std::vector<std::span<const T>> gradient_spans(const MlpGradients<T>& g) {
  std::vector<std::span<const T>> out;
  for (const auto& l : g.layers) {
    out.push_back(l.weight.flat());
    out.emplace_back(l.bias);
  }
  return out;
}

template <typename To, typename From>
BasicMlp<To> convert(const BasicMlp<From>& net) {
  std::vector<DenseLayer<To>> layers;
  for (const auto& l : net.layers()) {
    DenseLayer<To> c;
    c.weight = l.weight.template cast<To>();
    c.bias.assign(l.bias.begin(), l.bias.end());
    layers.push_back(std::move(c));
  }
  return BasicMlp<To>(std::move(layers));
}

} // namespace modmap::nn

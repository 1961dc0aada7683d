#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "modmap/error.hpp"

namespace modmap::nn {

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam update over a list of parameter tensors. The whole
/// step is rejected, leaving params and state untouched, if any gradient is
/// not finite.
template <typename T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads,
               AdamState& state, double lr, std::span<const std::string> names = {}) {
  if (params.size() != grads.size())
    throw DimensionMismatch("adam got " + std::to_string(params.size()) + " parameter tensors and " +
                            std::to_string(grads.size()) + " gradients");
  if (!(lr > 0)) throw UsageError("adam learning rate must be positive");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].size() != grads[k].size())
      throw DimensionMismatch("adam tensor " + std::to_string(k) + " shape");
    for (std::size_t i = 0; i < grads[k].size(); ++i) {
      if (!std::isfinite(grads[k][i])) {
        const std::string who = k < names.size() ? names[k] : "tensor " + std::to_string(k);
        throw NumericError("non-finite gradient in " + who + " at element " + std::to_string(i));
      }
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  } else if (state.first_moment.size() != params.size()) {
    throw DimensionMismatch("adam state tracks " + std::to_string(state.first_moment.size()) +
                            " tensors, got " + std::to_string(params.size()));
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    auto p = params[k];
    const auto g = grads[k];
    if (m.size() != p.size()) throw DimensionMismatch("adam moment shape for tensor " + std::to_string(k));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] = static_cast<T>(double(p[i]) - lr * mhat / (std::sqrt(vhat) + state.epsilon));
    }
  }
}

} // namespace modmap::nn

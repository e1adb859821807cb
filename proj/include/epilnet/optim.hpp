#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "epilnet/errors.hpp"

namespace epilnet {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments over one flat parameter vector; callers lay every parameter
/// out at a fixed offset (the model's manifest order).
template <typename T>
struct OptimizerState {
  AdamConfig config;
  std::vector<T> first_moment;
  std::vector<T> second_moment;
  std::uint64_t step = 0;

  OptimizerState() = default;
  OptimizerState(std::size_t parameter_count, AdamConfig cfg)
      : config(cfg), first_moment(parameter_count, T(0)), second_moment(parameter_count, T(0)) {}
};

struct AdamStep {
  double step_size;
  double eps_hat;
};

/// Begins a new step: bumps the counter and returns the bias-corrected step size
/// shared by every adam_update_segment() call of this step.
template <typename T>
AdamStep begin_adam_step(OptimizerState<T>& state) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.config.beta1, t);
  const double bc2 = 1.0 - std::pow(state.config.beta2, t);
  // lr * m_hat / (sqrt(v_hat) + eps) == step_size * m / (sqrt(v) + eps_hat)
  return {state.config.learning_rate * std::sqrt(bc2) / bc1, state.config.eps * std::sqrt(bc2)};
}

template <typename T>
void adam_update_segment(const AdamStep& step, const AdamConfig& cfg, std::span<T> params,
                         std::span<const T> grads, std::span<T> m, std::span<T> v) {
  if (params.size() != grads.size()) throw ShapeError("adam grads", params.size(), grads.size());
  if (m.size() != params.size() || v.size() != params.size()) throw ShapeError("adam moments", params.size(), m.size());
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(step.step_size);
  const T eps = static_cast<T>(step.eps_hat);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    params[i] -= lr * m[i] / (std::sqrt(v[i]) + eps);
  }
}

/// One Adam step over a flat parameter vector.
template <typename T>
void optimizer_step(std::span<T> params, std::span<const T> grads, OptimizerState<T>& state) {
  if (state.first_moment.size() != params.size()) throw ShapeError("adam state", params.size(), state.first_moment.size());
  const auto step = begin_adam_step(state);
  adam_update_segment<T>(step, state.config, params, grads, state.first_moment, state.second_moment);
}

}  // namespace epilnet

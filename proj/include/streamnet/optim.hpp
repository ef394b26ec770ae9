#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "streamnet/error.hpp"
#include "streamnet/tensor.hpp"

namespace streamnet {

/// Adam hyperparameters. The defaults are the values the experiments in this
/// project use: note beta1 > beta2, which reverses the usual (0.9, 0.999)
/// convention; both orderings are valid configurations here.
struct AdamConfig {
  double learning_rate = 0.0005;
  double beta1 = 0.99;
  double beta2 = 0.9;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("adam: learning_rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 must be in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 must be in [0,1)");
    if (!(epsilon > 0.0)) throw ConfigError("adam: epsilon must be > 0");
  }
};

/// Per-parameter first/second moment estimates plus the shared step counter.
struct AdamState {
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update over a parameter list. Parameters are
/// updated independently coordinate-by-coordinate, so iteration order cannot
/// affect the result. `keys` (optional, parallel to `params`) only feeds
/// error diagnostics.
inline void adam_step(const AdamConfig& config, AdamState& state,
                      std::span<Tensor* const> params,
                      std::span<const Tensor> grads,
                      std::span<const std::string> keys = {}) {
  config.validate();
  if (params.size() != grads.size()) {
    throw ShapeError("adam: " + std::to_string(params.size()) +
                     " parameters but " + std::to_string(grads.size()) +
                     " gradients");
  }
  if (state.first_moment.empty()) {
    state.first_moment.reserve(params.size());
    state.second_moment.reserve(params.size());
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam: state tracks " +
                     std::to_string(state.first_moment.size()) +
                     " parameters, got " + std::to_string(params.size()));
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double m_correction = 1.0 - std::pow(config.beta1, t);
  const double v_correction = 1.0 - std::pow(config.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = *params[i];
    const Tensor& g = grads[i];
    if (!theta.same_shape(g)) {
      throw ShapeError("adam: gradient shape " + shape_to_string(g.shape()) +
                       " does not match parameter " +
                       shape_to_string(theta.shape()));
    }
    if (!g.all_finite()) {
      const std::string key = i < keys.size() ? keys[i] : std::to_string(i);
      throw NumericError("adam: non-finite gradient for parameter '" + key +
                         "' at step " + std::to_string(state.step));
    }
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t j = 0, n = theta.numel(); j < n; ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m[j] / m_correction;
      const double v_hat = v[j] / v_correction;
      theta[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

}  // namespace streamnet

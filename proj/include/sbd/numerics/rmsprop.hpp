#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sbd/errors.hpp"
#include "sbd/numerics/matrix.hpp"

namespace sbd {

struct RmsPropConfig {
  double gamma = 0.9;    // forgetting factor
  double eta = 0.001;    // learning rate
  double epsilon = 1e-8; // added after the square root
};

/// Per-parameter squared-gradient accumulators, one per parameter matrix.
struct RmsPropState {
  RmsPropConfig config;
  std::vector<Matrix> accum;
};

/// r ← γ·r + (1−γ)·g²;  θ ← θ − η·g / (√r + ε)
inline void rmsprop_step(Matrix& param, const Matrix& grad, Matrix& accum, const RmsPropConfig& cfg) {
  require(param.same_shape(grad) && param.same_shape(accum),
          "rmsprop_step: shape mismatch " + shape_string(param) + " / " + shape_string(grad) + " / " +
              shape_string(accum));
  auto p = param.values();
  auto g = grad.values();
  auto r = accum.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    r[i] = cfg.gamma * r[i] + (1.0 - cfg.gamma) * g[i] * g[i];
    p[i] -= cfg.eta * g[i] / (std::sqrt(r[i]) + cfg.epsilon);
  }
}

}  // namespace sbd

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>

#include "sbd/errors.hpp"
#include "sbd/label.hpp"
#include "sbd/numerics/matrix.hpp"

namespace sbd {

struct ClassWeights {
  double nb = 1.0;
  double b = 1.0;

  double operator[](Label l) const { return l == Label::B ? b : nb; }
};

struct LossResult {
  double loss = 0.0;
  Matrix dlogits;  // gradient w.r.t. the pre-softmax logits, m×2
};

inline constexpr double kLogClamp = 1e-12;

/// Class-weighted cross entropy over the active positions. `mask` flags
/// active positions (nonzero); an empty mask means every position is active.
inline LossResult weighted_cross_entropy(std::span<const Label> labels, const Matrix& probs, ClassWeights cw,
                                         std::span<const std::uint8_t> mask = {}) {
  require(probs.cols() == kNumClasses, "weighted_cross_entropy: expected two probability columns");
  require(labels.size() == probs.rows(), "weighted_cross_entropy: label/prediction length mismatch");
  require(mask.empty() || mask.size() == labels.size(), "weighted_cross_entropy: mask length mismatch");
  LossResult r{0.0, Matrix(probs.rows(), kNumClasses)};
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (!mask.empty() && mask[t] == 0) continue;
    const std::size_t y = static_cast<std::size_t>(labels[t]);
    const double w = cw[labels[t]];
    r.loss -= w * std::log(std::max(probs(t, y), kLogClamp));
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      r.dlogits(t, k) = w * (probs(t, k) - (k == y ? 1.0 : 0.0));
    }
  }
  return r;
}

}  // namespace sbd

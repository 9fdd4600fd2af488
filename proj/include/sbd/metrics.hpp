#pragma once

#include <cstddef>
#include <span>

#include "sbd/errors.hpp"
#include "sbd/label.hpp"

namespace sbd {

/// Boundary-class confusion counts. NB-NB agreements are not scored.
struct BoundaryCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  BoundaryCounts& operator+=(const BoundaryCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }

  /// 0 when nothing was predicted as B.
  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  double f1() const {
    const double p = precision();
    const double r = recall();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }

  friend bool operator==(const BoundaryCounts&, const BoundaryCounts&) = default;
};

inline BoundaryCounts count_boundaries(std::span<const Label> gold, std::span<const Label> pred) {
  require(gold.size() == pred.size(), "count_boundaries: gold and predicted lengths differ");
  BoundaryCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool g = gold[i] == Label::B;
    const bool p = pred[i] == Label::B;
    if (g && p) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
  }
  return c;
}

}  // namespace sbd

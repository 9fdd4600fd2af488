#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "sbd/errors.hpp"
#include "sbd/numerics/matrix.hpp"
#include "sbd/numerics/rng.hpp"

namespace sbd {

enum class Activation { identity, sigmoid, tanh, relu };

enum class Mode { train, inference };

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::identity: return z;
    case Activation::sigmoid: return sigmoid(z);
    case Activation::tanh: return std::tanh(z);
    case Activation::relu: return z > 0.0 ? z : 0.0;
  }
  return z;
}

/// Derivative expressed through the activation's output.
inline double activation_grad_from_output(Activation a, double y) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::tanh: return 1.0 - y * y;
    case Activation::relu: return y > 0.0 ? 1.0 : 0.0;
  }
  return 1.0;
}

// ---------------------------------------------------------------------------
// Fully connected

/// activation(Wᵀx + b) with W of shape k×j.
inline Vector dense_forward(std::span<const double> x, const Matrix& weights, std::span<const double> bias,
                            Activation act) {
  require(x.size() == weights.rows(), "dense_forward: input size " + std::to_string(x.size()) +
                                          " does not match weight rows " + std::to_string(weights.rows()));
  require(bias.size() == weights.cols(), "dense_forward: bias size does not match weight cols");
  Vector out(bias.begin(), bias.end());
  for (std::size_t k = 0; k < x.size(); ++k) axpy(x[k], weights.row(k), out);
  for (double& v : out) v = activate(act, v);
  return out;
}

/// Row-wise dense layer: Y = act(X W + b), X m×k, W k×j, b 1×j.
inline Matrix dense_rows_forward(const Matrix& x, const Matrix& weights, const Matrix& bias, Activation act) {
  require(x.cols() == weights.rows(), "dense_rows_forward: " + shape_string(x) + " · " + shape_string(weights));
  require(bias.rows() == 1 && bias.cols() == weights.cols(), "dense_rows_forward: bias shape");
  Matrix y(x.rows(), weights.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto out = y.row(t);
    auto in = x.row(t);
    std::copy(bias.values().begin(), bias.values().end(), out.begin());
    for (std::size_t k = 0; k < in.size(); ++k) axpy(in[k], weights.row(k), out);
    for (double& v : out) v = activate(act, v);
  }
  return y;
}

/// Backward of dense_rows_forward given its output. Accumulates into the
/// weight/bias gradients and returns dX.
inline Matrix dense_rows_backward(const Matrix& x, const Matrix& y, const Matrix& dy, const Matrix& weights,
                                  Activation act, Matrix& dweights, Matrix& dbias) {
  Matrix dx(x.rows(), x.cols());
  Vector dz(weights.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t j = 0; j < dz.size(); ++j) dz[j] = dy(t, j) * activation_grad_from_output(act, y(t, j));
    auto in = x.row(t);
    auto dxt = dx.row(t);
    for (std::size_t k = 0; k < in.size(); ++k) {
      axpy(in[k], dz, dweights.row(k));
      dxt[k] = dot(weights.row(k), dz);
    }
    axpy(1.0, dz, dbias.row(0));
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Softmax

/// Numerically stable softmax (max subtraction). Non-finite logits yield NaN
/// probabilities so a diverged network shows up as a non-finite loss.
inline Vector softmax(std::span<const double> z) {
  require(z.size() >= 2, "softmax: need at least two classes");
  double zmax = -std::numeric_limits<double>::infinity();
  for (double v : z) {
    if (!std::isfinite(v)) return Vector(z.size(), std::numeric_limits<double>::quiet_NaN());
    zmax = std::max(zmax, v);
  }
  Vector out(z.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    out[k] = std::exp(z[k] - zmax);
    sum += out[k];
  }
  for (double& v : out) v /= sum;
  return out;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    auto s = softmax(logits.row(t));
    std::copy(s.begin(), s.end(), p.row(t).begin());
  }
  return p;
}

// ---------------------------------------------------------------------------
// Same-length 1-D convolution over time

/// Zero padding added on each side for a filter of `width` rows.
inline std::size_t conv_padding(std::size_t width) { return width / 2; }

/// X (m×d) with `pad` zero rows prepended and appended.
inline Matrix zero_pad_rows(const Matrix& x, std::size_t pad) {
  Matrix out(x.rows() + 2 * pad, x.cols());
  std::copy(x.data(), x.data() + x.size(), out.data() + pad * x.cols());
  return out;
}

/// Output row j applies every filter to the flattened window of `width`
/// consecutive padded rows starting at padded row j. With an even width the
/// surplus final position is dropped so the output has exactly m rows.
/// `filters` is n_f × (width·d).
inline Matrix conv1d_same_forward(const Matrix& x, const Matrix& filters, const Matrix& bias, std::size_t width,
                                  Activation act) {
  require(width >= 1, "conv1d: filter width must be >= 1");
  require(x.rows() >= 1, "conv1d: empty sequence");
  require(filters.cols() == width * x.cols(),
          "conv1d: filters " + shape_string(filters) + " incompatible with width " + std::to_string(width) +
              " and input " + shape_string(x));
  require(bias.rows() == 1 && bias.cols() == filters.rows(), "conv1d: bias shape");
  const std::size_t m = x.rows();
  const std::size_t span_len = width * x.cols();
  const Matrix padded = zero_pad_rows(x, conv_padding(width));
  Matrix out(m, filters.rows());
  for (std::size_t j = 0; j < m; ++j) {
    std::span<const double> window(padded.data() + j * x.cols(), span_len);
    for (std::size_t f = 0; f < filters.rows(); ++f) {
      out(j, f) = activate(act, dot(filters.row(f), window) + bias(0, f));
    }
  }
  return out;
}

inline Matrix conv1d_same_backward(const Matrix& x, const Matrix& out, const Matrix& dout, const Matrix& filters,
                                   std::size_t width, Activation act, Matrix& dfilters, Matrix& dbias) {
  const std::size_t m = x.rows();
  const std::size_t d = x.cols();
  const std::size_t pad = conv_padding(width);
  const std::size_t span_len = width * d;
  const Matrix padded = zero_pad_rows(x, pad);
  Matrix dpadded(padded.rows(), d);
  for (std::size_t j = 0; j < m; ++j) {
    std::span<const double> window(padded.data() + j * d, span_len);
    std::span<double> dwindow(dpadded.data() + j * d, span_len);
    for (std::size_t f = 0; f < filters.rows(); ++f) {
      const double dz = dout(j, f) * activation_grad_from_output(act, out(j, f));
      if (dz == 0.0) continue;
      axpy(dz, window, dfilters.row(f));
      axpy(dz, filters.row(f), dwindow);
      dbias(0, f) += dz;
    }
  }
  Matrix dx(m, d);
  std::copy(dpadded.data() + pad * d, dpadded.data() + (pad + m) * d, dx.data());
  return dx;
}

// ---------------------------------------------------------------------------
// Same-length max pooling over time

struct PoolResult {
  Matrix values;
  std::vector<std::size_t> argmax;  // row index of the max, per (row, col)
};

/// Stride-1 pooling: output row j is the column-wise max over input rows
/// j-⌊h/2⌋ … j+⌈h/2⌉-1, clipped to the sequence.
inline PoolResult maxpool1d_same_with_argmax(const Matrix& c, std::size_t window) {
  require(window >= 1, "maxpool: window must be >= 1");
  const std::size_t m = c.rows();
  const std::size_t n = c.cols();
  const std::size_t before = window / 2;
  const std::size_t after = (window + 1) / 2 - 1;
  PoolResult r{Matrix(m, n), std::vector<std::size_t>(m * n)};
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t lo = j >= before ? j - before : 0;
    const std::size_t hi = std::min(m - 1, j + after);
    for (std::size_t col = 0; col < n; ++col) {
      std::size_t best = lo;
      for (std::size_t i = lo + 1; i <= hi; ++i) {
        if (c(i, col) > c(best, col)) best = i;
      }
      r.values(j, col) = c(best, col);
      r.argmax[j * n + col] = best;
    }
  }
  return r;
}

inline Matrix maxpool1d_same(const Matrix& c, std::size_t window) {
  return maxpool1d_same_with_argmax(c, window).values;
}

inline Matrix maxpool1d_same_backward(const PoolResult& pooled, const Matrix& dout) {
  Matrix dc(dout.rows(), dout.cols());
  const std::size_t n = dout.cols();
  for (std::size_t j = 0; j < dout.rows(); ++j) {
    for (std::size_t col = 0; col < n; ++col) dc(pooled.argmax[j * n + col], col) += dout(j, col);
  }
  return dc;
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted-dropout mask: entries are 0 or 1/(1-rate).
inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  Matrix mask(rows, cols, 1.0);
  if (rate == 0.0) return mask;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : mask.values()) v = rng.uniform() < rate ? 0.0 : keep_scale;
  return mask;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  require(a.same_shape(b), "hadamard: shape mismatch");
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
  return out;
}

inline Matrix dropout_apply(const Matrix& h, double rate, Mode mode, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1)");
  if (mode == Mode::inference || rate == 0.0) return h;
  return hadamard(h, dropout_mask(h.rows(), h.cols(), rate, rng));
}

// ---------------------------------------------------------------------------
// Initialization

/// Entries drawn from N(0, 2/(rows+cols)).
inline Matrix glorot_init(std::size_t rows, std::size_t cols, Rng& rng) {
  require(rows >= 1 && cols >= 1, "glorot_init: empty shape");
  const double stddev = std::sqrt(2.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal(0.0, stddev);
  return m;
}

}  // namespace sbd

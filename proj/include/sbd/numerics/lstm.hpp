#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sbd/errors.hpp"
#include "sbd/numerics/layers.hpp"
#include "sbd/numerics/matrix.hpp"
#include "sbd/numerics/rng.hpp"

namespace sbd {

/// Weights of one LSTM direction. Gate blocks are stacked row-wise in the
/// order input (i), forget (f), output (o), candidate (g); each block has
/// `units` rows. The per-direction output projection y = Wy·h + by is applied
/// with identity activation.
struct LstmWeights {
  Matrix input;      // 4n × in
  Matrix hidden;     // 4n × n
  Matrix bias;       // 1 × 4n
  Matrix proj;       // n × n
  Matrix proj_bias;  // 1 × n

  std::size_t units() const { return hidden.cols(); }
  std::size_t input_size() const { return input.cols(); }

  static LstmWeights zeros(std::size_t in, std::size_t units) {
    return {Matrix(4 * units, in), Matrix(4 * units, units), Matrix(1, 4 * units), Matrix(units, units),
            Matrix(1, units)};
  }

  /// Glorot per gate block; zero biases except the forget gate.
  static LstmWeights glorot(std::size_t in, std::size_t units, double forget_bias, Rng& rng) {
    LstmWeights w = zeros(in, units);
    for (std::size_t gate = 0; gate < 4; ++gate) {
      Matrix wx = glorot_init(units, in, rng);
      Matrix wh = glorot_init(units, units, rng);
      std::copy(wx.data(), wx.data() + wx.size(), w.input.data() + gate * units * in);
      std::copy(wh.data(), wh.data() + wh.size(), w.hidden.data() + gate * units * units);
    }
    for (std::size_t u = 0; u < units; ++u) w.bias(0, units + u) = forget_bias;
    w.proj = glorot_init(units, units, rng);
    return w;
  }
};

struct LstmStep {
  Vector i, f, o, g;
  Vector c;
  Vector tanh_c;
  Vector h;
};

/// One time step: gates from Wx·x + Wh·h_prev + b, then
/// c = f⊙c_prev + i⊙g and h = o⊙tanh(c). No peephole connections.
inline LstmStep lstm_cell_step(std::span<const double> x, std::span<const double> h_prev,
                               std::span<const double> c_prev, const LstmWeights& w) {
  const std::size_t n = w.units();
  require(x.size() == w.input_size(), "lstm_cell_step: input size mismatch");
  require(h_prev.size() == n && c_prev.size() == n, "lstm_cell_step: state size mismatch");
  LstmStep s{Vector(n), Vector(n), Vector(n), Vector(n), Vector(n), Vector(n), Vector(n)};
  for (std::size_t r = 0; r < 4 * n; ++r) {
    const double z = dot(w.input.row(r), x) + dot(w.hidden.row(r), h_prev) + w.bias(0, r);
    const std::size_t gate = r / n;
    const std::size_t u = r % n;
    switch (gate) {
      case 0: s.i[u] = sigmoid(z); break;
      case 1: s.f[u] = sigmoid(z); break;
      case 2: s.o[u] = sigmoid(z); break;
      default: s.g[u] = std::tanh(z); break;
    }
  }
  for (std::size_t u = 0; u < n; ++u) {
    s.c[u] = s.f[u] * c_prev[u] + s.i[u] * s.g[u];
    s.tanh_c[u] = std::tanh(s.c[u]);
    s.h[u] = s.o[u] * s.tanh_c[u];
  }
  return s;
}

struct LstmCache {
  Matrix input;
  std::vector<LstmStep> steps;
};

/// Runs one direction over the rows of `x` from a zero state and returns the
/// projected outputs (m × n).
inline Matrix lstm_forward(const Matrix& x, const LstmWeights& w, LstmCache* cache = nullptr) {
  const std::size_t n = w.units();
  require(x.cols() == w.input_size(), "lstm_forward: input " + shape_string(x) + " vs weights " +
                                          shape_string(w.input));
  Matrix y(x.rows(), n);
  Vector h(n, 0.0), c(n, 0.0);
  if (cache) {
    cache->input = x;
    cache->steps.clear();
    cache->steps.reserve(x.rows());
  }
  for (std::size_t t = 0; t < x.rows(); ++t) {
    LstmStep s = lstm_cell_step(x.row(t), h, c, w);
    auto yt = y.row(t);
    for (std::size_t r = 0; r < n; ++r) yt[r] = dot(w.proj.row(r), s.h) + w.proj_bias(0, r);
    h = s.h;
    c = s.c;
    if (cache) cache->steps.push_back(std::move(s));
  }
  return y;
}

/// Backpropagation through time for one direction.
inline Matrix lstm_backward(const LstmCache& cache, const LstmWeights& w, const Matrix& dy, LstmWeights& grad) {
  const std::size_t n = w.units();
  const std::size_t m = cache.steps.size();
  require(m == cache.input.rows() && dy.rows() == m, "lstm_backward: missing or mismatched forward cache");
  Matrix dx(m, w.input_size());
  Vector dh_next(n, 0.0), dc_next(n, 0.0), dh(n), dz(4 * n);
  const Vector zeros(n, 0.0);
  for (std::size_t t = m; t-- > 0;) {
    const LstmStep& s = cache.steps[t];
    const Vector& c_prev = t > 0 ? cache.steps[t - 1].c : zeros;
    const Vector& h_prev = t > 0 ? cache.steps[t - 1].h : zeros;
    auto dyt = dy.row(t);

    // y = Wy h + by
    dh = dh_next;
    for (std::size_t r = 0; r < n; ++r) {
      if (dyt[r] == 0.0) continue;
      axpy(dyt[r], s.h, grad.proj.row(r));
      axpy(dyt[r], w.proj.row(r), dh);
      grad.proj_bias(0, r) += dyt[r];
    }

    for (std::size_t u = 0; u < n; ++u) {
      const double d_o = dh[u] * s.tanh_c[u];
      const double dc = dh[u] * s.o[u] * (1.0 - s.tanh_c[u] * s.tanh_c[u]) + dc_next[u];
      const double d_i = dc * s.g[u];
      const double d_g = dc * s.i[u];
      const double d_f = dc * c_prev[u];
      dc_next[u] = dc * s.f[u];
      dz[u] = d_i * s.i[u] * (1.0 - s.i[u]);
      dz[n + u] = d_f * s.f[u] * (1.0 - s.f[u]);
      dz[2 * n + u] = d_o * s.o[u] * (1.0 - s.o[u]);
      dz[3 * n + u] = d_g * (1.0 - s.g[u] * s.g[u]);
    }

    auto xt = cache.input.row(t);
    auto dxt = dx.row(t);
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    for (std::size_t r = 0; r < 4 * n; ++r) {
      const double g = dz[r];
      if (g == 0.0) continue;
      axpy(g, xt, grad.input.row(r));
      axpy(g, h_prev, grad.hidden.row(r));
      grad.bias(0, r) += g;
      axpy(g, w.input.row(r), dxt);
      axpy(g, w.hidden.row(r), dh_next);
    }
  }
  return dx;
}

struct BiLstmCache {
  LstmCache forward;
  LstmCache backward;
};

/// Bidirectional layer: the backward direction runs over the row-reversed
/// input and its outputs are re-reversed; the two output sequences are summed.
inline Matrix bilstm_forward(const Matrix& x, const LstmWeights& fwd, const LstmWeights& bwd,
                             BiLstmCache* cache = nullptr) {
  require(x.rows() >= 1, "bilstm_forward: empty sequence");
  require(fwd.units() == bwd.units(), "bilstm_forward: direction size mismatch");
  Matrix yf = lstm_forward(x, fwd, cache ? &cache->forward : nullptr);
  Matrix yb = reverse_rows(lstm_forward(reverse_rows(x), bwd, cache ? &cache->backward : nullptr));
  add_inplace(yf, yb);
  return yf;
}

inline Matrix bilstm_backward(const BiLstmCache& cache, const LstmWeights& fwd, const LstmWeights& bwd,
                              const Matrix& dy, LstmWeights& dfwd, LstmWeights& dbwd) {
  Matrix dx = lstm_backward(cache.forward, fwd, dy, dfwd);
  Matrix dxb = lstm_backward(cache.backward, bwd, reverse_rows(dy), dbwd);
  add_inplace(dx, reverse_rows(dxb));
  return dx;
}

}  // namespace sbd

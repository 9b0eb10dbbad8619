#pragma once

// Shared helpers for the test suite: relative-error metric, random tensor
// factories, and brute-force reference implementations (oracles) that the
// library code is checked against. Oracles are deliberately written in the
// dumbest possible style — nested loops, no shared code with the library.

#include <cmath>
#include <cstdint>
#include <vector>

#include "convkit/rng.hpp"
#include "convkit/tensor.hpp"

namespace ckt {

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-8});
}

// Max |a-b| over two equal-sized tensors.
inline double max_abs_diff(const convkit::Tensor& a, const convkit::Tensor& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Max elementwise relative error.
inline double max_rel_err(const convkit::Tensor& a, const convkit::Tensor& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i]));
  return m;
}

inline convkit::Tensor random_tensor(convkit::Shape shape, convkit::Rng& rng,
                                     double lo = -1.0, double hi = 1.0) {
  convkit::Tensor t(std::move(shape));
  for (auto& v : t.raw()) v = rng.uniform(lo, hi);
  return t;
}

inline convkit::Tensor random_gaussian(convkit::Shape shape, convkit::Rng& rng,
                                       double sigma = 1.0) {
  convkit::Tensor t(std::move(shape));
  for (auto& v : t.raw()) v = rng.gaussian(0.0, sigma);
  return t;
}

// Reference matmul: plain triple loop.
inline convkit::Tensor oracle_matmul(const convkit::Tensor& a, const convkit::Tensor& b) {
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  convkit::Tensor c({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0;
      for (std::int64_t kk = 0; kk < k; ++kk) s += a(i, kk) * b(kk, j);
      c(i, j) = s;
    }
  return c;
}

// Reference direct convolution, 6 nested loops, zero padding.
// x: (C,H,W); w: (F, C, kh, kw); b: (F). Returns (F, Ho, Wo).
inline convkit::Tensor oracle_conv2d(const convkit::Tensor& x, const convkit::Tensor& w,
                                     const convkit::Tensor& bias, std::int64_t s,
                                     std::int64_t p) {
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::int64_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t Ho = (H + 2 * p - kh) / s + 1;
  const std::int64_t Wo = (W + 2 * p - kw) / s + 1;
  convkit::Tensor y({F, Ho, Wo});
  for (std::int64_t f = 0; f < F; ++f)
    for (std::int64_t oi = 0; oi < Ho; ++oi)
      for (std::int64_t oj = 0; oj < Wo; ++oj) {
        double acc = bias[f];
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t di = 0; di < kh; ++di)
            for (std::int64_t dj = 0; dj < kw; ++dj) {
              const std::int64_t ii = oi * s - p + di;
              const std::int64_t jj = oj * s - p + dj;
              if (ii >= 0 && ii < H && jj >= 0 && jj < W) acc += w(f, c, di, dj) * x(c, ii, jj);
            }
        y(f, oi, oj) = acc;
      }
  return y;
}

}  // namespace ckt

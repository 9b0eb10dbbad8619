#pragma once

// Data augmentation: random crop + horizontal reflection, the ten-crop test
// protocol, PCA color jitter, and multi-scale (shorter-side) rescaling.
//
// All images here are batchless rank-3 tensors (C,H,W); augmentation runs
// per sample before batching, on an explicit rng stream, so a data loader can
// process distinct samples concurrently on streams derived from
// (epoch, sample index) without any schedule dependence.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "convkit/error.hpp"
#include "convkit/rng.hpp"
#include "convkit/tensor.hpp"

namespace convkit {

// -------------------------------------------------------------------------
// crops and flips
// -------------------------------------------------------------------------

inline void check_image(const Tensor& img, const char* who) {
  if (img.rank() != 3)
    throw ShapeError(std::string(who) + ": image must be rank-3 (C,H,W), got " +
                     shape_str(img.shape()));
}

inline Tensor hflip(const Tensor& img) {
  check_image(img, "hflip");
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out(img.shape());
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) out(ci, y, x) = img(ci, y, w - 1 - x);
  return out;
}

inline Tensor crop(const Tensor& img, std::int64_t top, std::int64_t left, std::int64_t ch,
                   std::int64_t cw) {
  check_image(img, "crop");
  if (ch < 1 || cw < 1 || top < 0 || left < 0 || top + ch > img.dim(1) ||
      left + cw > img.dim(2))
    throw ShapeError("crop: window " + std::to_string(ch) + "x" + std::to_string(cw) + " at (" +
                     std::to_string(top) + "," + std::to_string(left) + ") leaves image " +
                     shape_str(img.shape()));
  const std::int64_t c = img.dim(0);
  Tensor out({c, ch, cw});
  for (std::int64_t ci = 0; ci < c; ++ci)
    for (std::int64_t y = 0; y < ch; ++y)
      for (std::int64_t x = 0; x < cw; ++x) out(ci, y, x) = img(ci, top + y, left + x);
  return out;
}

struct CropPolicy {
  std::int64_t s_src = 64;
  std::int64_t s_crop = 56;
  bool flip = true;

  void validate() const {
    if (s_crop < 1 || s_crop > s_src)
      throw ValueError("CropPolicy: need 1 <= s_crop <= s_src, got crop " +
                       std::to_string(s_crop) + " from " + std::to_string(s_src));
  }

  // Distinct augmentations reachable from one square source image. Offsets
  // range over the half-open square [0, s_src - s_crop)^2 — exactly the
  // published (256-224) x (256-224) x 2 = 2,048 arithmetic — except in the
  // degenerate s_src == s_crop case, where the offset is pinned to 0 and only
  // the flip factor remains.
  std::int64_t multiplicity() const {
    validate();
    const std::int64_t span = s_src == s_crop ? 1 : s_src - s_crop;
    return span * span * (flip ? 2 : 1);
  }
};

// Uniform random top-left offset in [0, H - s_crop) x [0, W - s_crop) (or 0
// where the span is empty), then an optional coin-flip horizontal reflection.
// Rectangular inputs are accepted so scale-jittered images feed straight in.
inline Tensor random_crop_flip(const Tensor& img, const CropPolicy& policy, Rng& rng) {
  check_image(img, "random_crop_flip");
  policy.validate();
  if (img.dim(1) < policy.s_crop || img.dim(2) < policy.s_crop)
    throw ShapeError("random_crop_flip: image " + shape_str(img.shape()) +
                     " smaller than crop " + std::to_string(policy.s_crop));
  const std::int64_t span_h = img.dim(1) - policy.s_crop;
  const std::int64_t span_w = img.dim(2) - policy.s_crop;
  const std::int64_t top = span_h == 0 ? 0 : static_cast<std::int64_t>(rng.below(
                                                 static_cast<std::uint64_t>(span_h)));
  const std::int64_t left = span_w == 0 ? 0 : static_cast<std::int64_t>(rng.below(
                                                  static_cast<std::uint64_t>(span_w)));
  Tensor out = crop(img, top, left, policy.s_crop, policy.s_crop);
  if (policy.flip && rng.coin()) out = hflip(out);
  return out;
}

// The ten-crop evaluation protocol: TL, TR, BL, BR, center, then the
// horizontal reflections of those five in the same order.
inline std::vector<Tensor> ten_crop(const Tensor& img, std::int64_t s_crop) {
  check_image(img, "ten_crop");
  if (s_crop < 1 || s_crop > img.dim(1) || s_crop > img.dim(2))
    throw ShapeError("ten_crop: crop " + std::to_string(s_crop) + " from image " +
                     shape_str(img.shape()));
  const std::int64_t dh = img.dim(1) - s_crop;
  const std::int64_t dw = img.dim(2) - s_crop;
  const std::array<std::pair<std::int64_t, std::int64_t>, 5> offsets{
      {{0, 0}, {0, dw}, {dh, 0}, {dh, dw}, {dh / 2, dw / 2}}};
  std::vector<Tensor> crops;
  crops.reserve(10);
  for (const auto& [top, left] : offsets) crops.push_back(crop(img, top, left, s_crop, s_crop));
  for (std::int64_t i = 0; i < 5; ++i) crops.push_back(hflip(crops[static_cast<std::size_t>(i)]));
  return crops;
}

// -------------------------------------------------------------------------
// PCA color augmentation
// -------------------------------------------------------------------------

struct PcaColorModel {
  // beta[i] is the i-th eigenvector of the RGB pixel covariance; lambda
  // descending and nonnegative. alpha_std is the paper's sigma = 0.1: each
  // call draws alpha_i ~ N(0, 0.1^2), i.e. standard deviation 0.1 (not
  // variance 0.1).
  std::array<std::array<double, 3>, 3> beta{};
  std::array<double, 3> lambda{};
  double alpha_std = 0.1;
};

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric 3x3 matrix. Columns of v
// come out orthonormal; eigenvalues land on the diagonal of a.
inline void jacobi3(std::array<std::array<double, 3>, 3>& a,
                    std::array<std::array<double, 3>, 3>& v) {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v[i][j] = i == j ? 1.0 : 0.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
    if (off < 1e-300) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
}

}  // namespace detail

// PCA of the 3x3 covariance of sampled RGB triples. Pixels are mean-centered
// per channel before the covariance (standard PCA; the source text does not
// say, and the uncentered second-moment matrix is the documented alternative).
// Sign convention: the first component of each eigenvector with magnitude
// above 1e-12 is made positive, so the decomposition is deterministic.
inline PcaColorModel fit_pca_color(const std::vector<std::array<double, 3>>& pixels) {
  if (pixels.size() < 4)
    throw ValueError("fit_pca_color: need at least 4 pixels, got " +
                     std::to_string(pixels.size()));
  const double n = static_cast<double>(pixels.size());
  // accumulate relative to the first pixel: covariance is shift-invariant,
  // cancellation shrinks, and an all-identical sample yields exact zeros
  const std::array<double, 3> base = pixels[0];
  std::array<double, 3> mean{};
  for (const auto& p : pixels)
    for (int c = 0; c < 3; ++c) mean[c] += p[c] - base[c];
  for (int c = 0; c < 3; ++c) mean[c] /= n;
  std::array<std::array<double, 3>, 3> cov{};
  for (const auto& p : pixels)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        cov[i][j] += (p[i] - base[i] - mean[i]) * (p[j] - base[j] - mean[j]);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) cov[i][j] /= n;  // population covariance

  std::array<std::array<double, 3>, 3> v{};
  detail::jacobi3(cov, v);

  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int a, int b) { return cov[a][a] > cov[b][b]; });
  PcaColorModel model;
  for (int i = 0; i < 3; ++i) {
    const int k = order[i];
    model.lambda[i] = std::max(0.0, cov[k][k]);  // clamp -0-scale Jacobi residue
    for (int c = 0; c < 3; ++c) model.beta[i][c] = v[c][k];
    for (int c = 0; c < 3; ++c) {
      if (std::abs(model.beta[i][c]) > 1e-12) {
        if (model.beta[i][c] < 0.0)
          for (int cc = 0; cc < 3; ++cc) model.beta[i][cc] = -model.beta[i][cc];
        break;
      }
    }
  }
  return model;
}

// Uniform random sample of RGB triples from a set of 3-channel images,
// capped (default 1e6) so the covariance pass stays tractable on any corpus.
inline std::vector<std::array<double, 3>> sample_pixels(const std::vector<Tensor>& images,
                                                        Rng& rng,
                                                        std::int64_t cap = 1000000) {
  std::int64_t total = 0;
  for (const Tensor& img : images) {
    check_image(img, "sample_pixels");
    if (img.dim(0) != 3)
      throw ShapeError("sample_pixels: need 3-channel images, got " + shape_str(img.shape()));
    total += img.dim(1) * img.dim(2);
  }
  std::vector<std::array<double, 3>> pixels;
  auto pixel_at = [&](std::int64_t flat) {
    for (const Tensor& img : images) {
      const std::int64_t hw = img.dim(1) * img.dim(2);
      if (flat < hw) {
        const std::int64_t y = flat / img.dim(2), x = flat % img.dim(2);
        return std::array<double, 3>{img(0, y, x), img(1, y, x), img(2, y, x)};
      }
      flat -= hw;
    }
    throw ValueError("sample_pixels: index out of range");
  };
  if (total <= cap) {
    pixels.reserve(static_cast<std::size_t>(total));
    for (std::int64_t i = 0; i < total; ++i) pixels.push_back(pixel_at(i));
  } else {
    pixels.reserve(static_cast<std::size_t>(cap));
    for (std::int64_t i = 0; i < cap; ++i)
      pixels.push_back(pixel_at(static_cast<std::int64_t>(
          rng.below(static_cast<std::uint64_t>(total)))));
  }
  return pixels;
}

// Adds [b1 b2 b3][a1*l1, a2*l2, a3*l3]^T to every pixel; the three alphas are
// drawn once per call, so the color shift is constant across the image.
inline Tensor apply_pca_color(const Tensor& img, const PcaColorModel& model, Rng& rng) {
  check_image(img, "apply_pca_color");
  if (img.dim(0) != 3)
    throw ShapeError("apply_pca_color: need a 3-channel image, got " + shape_str(img.shape()));
  std::array<double, 3> alpha{};
  for (int i = 0; i < 3; ++i) alpha[i] = rng.gaussian(0.0, model.alpha_std);
  std::array<double, 3> offset{};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 3; ++i) offset[c] += model.beta[i][c] * alpha[i] * model.lambda[i];
  if (offset[0] == 0.0 && offset[1] == 0.0 && offset[2] == 0.0) return img;  // exact no-op
  Tensor out = img;
  const std::int64_t hw = img.dim(1) * img.dim(2);
  for (int c = 0; c < 3; ++c) {
    double* plane = out.data() + c * hw;
    for (std::int64_t i = 0; i < hw; ++i) plane[i] += offset[c];
  }
  return out;
}

// -------------------------------------------------------------------------
// multi-scale rescaling
// -------------------------------------------------------------------------

// Bilinear resize with half-pixel sample centers and clamp-to-edge:
// src_x = (dst_x + 0.5) * W_in / W_out - 0.5. Constants are preserved
// exactly; linear ramps are reproduced exactly away from the clamped border.
inline Tensor resize_bilinear(const Tensor& img, std::int64_t out_h, std::int64_t out_w) {
  check_image(img, "resize_bilinear");
  if (out_h < 1 || out_w < 1)
    throw ValueError("resize_bilinear: output size must be positive");
  const std::int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::int64_t y = 0; y < out_h; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
    const std::int64_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::int64_t x = 0; x < out_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
      const std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
      const std::int64_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::int64_t ci = 0; ci < c; ++ci) {
        // lerp as a + t*(b-a): preserves constant images bit-exactly
        const double v00 = img(ci, y0, x0), v01 = img(ci, y0, x1);
        const double v10 = img(ci, y1, x0), v11 = img(ci, y1, x1);
        const double top = v00 + wx * (v01 - v00);
        const double bot = v10 + wx * (v11 - v10);
        out(ci, y, x) = top + wy * (bot - top);
      }
    }
  }
  return out;
}

struct ScaleJitterPolicy {
  std::int64_t s_min = 64;
  std::int64_t s_max = 64;

  void validate() const {
    if (s_min < 1 || s_min > s_max)
      throw ValueError("ScaleJitterPolicy: need 1 <= s_min <= s_max, got [" +
                       std::to_string(s_min) + "," + std::to_string(s_max) + "]");
  }
};

// Shorter side resized to a uniform-random S in [s_min, s_max] (inclusive),
// aspect ratio preserved by rounding the longer side.
inline Tensor scale_jitter(const Tensor& img, const ScaleJitterPolicy& policy, Rng& rng) {
  check_image(img, "scale_jitter");
  policy.validate();
  const std::int64_t s =
      policy.s_min +
      static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(policy.s_max - policy.s_min + 1)));
  const std::int64_t h = img.dim(1), w = img.dim(2);
  std::int64_t out_h, out_w;
  if (h <= w) {
    out_h = s;
    out_w = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(static_cast<double>(w) * static_cast<double>(s) /
                                                  static_cast<double>(h))));
  } else {
    out_w = s;
    out_h = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(static_cast<double>(h) * static_cast<double>(s) /
                                                  static_cast<double>(w))));
  }
  return resize_bilinear(img, out_h, out_w);
}

}  // namespace convkit

#pragma once

// The layer vocabulary: activations, conv2d (im2col-lowered), mlpconv,
// max/avg pooling, global average pooling, dense, dropout (original scheme:
// no train-time rescale, multiply by p at test), and softmax cross-entropy.
// Each layer exists as a pure forward function plus a tape op recording the
// matching backward closure.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "convkit/autodiff.hpp"
#include "convkit/error.hpp"
#include "convkit/rng.hpp"
#include "convkit/tensor.hpp"
#include "convkit/threading.hpp"

namespace convkit {

enum class ActKind { relu, sigmoid, tanh_ };

inline ActKind act_from_string(const std::string& s) {
  if (s == "relu") return ActKind::relu;
  if (s == "sigmoid") return ActKind::sigmoid;
  if (s == "tanh") return ActKind::tanh_;
  throw ValueError("unknown activation '" + s + "'");
}

inline std::string act_to_string(ActKind k) {
  switch (k) {
    case ActKind::relu: return "relu";
    case ActKind::sigmoid: return "sigmoid";
    case ActKind::tanh_: return "tanh";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

inline Tensor activation_fwd(ActKind kind, const Tensor& z) {
  Tensor y = z;
  switch (kind) {
    case ActKind::relu: {
      double margin = std::numeric_limits<double>::infinity();
      for (auto& v : y.raw()) {
        margin = std::min(margin, std::fabs(v));
        v = v > 0 ? v : 0.0;
      }
      kink_note(margin);
      break;
    }
    case ActKind::sigmoid:
      for (auto& v : y.raw()) v = 1.0 / (1.0 + std::exp(-v));
      break;
    case ActKind::tanh_:
      for (auto& v : y.raw()) v = std::tanh(v);
      break;
  }
  return y;
}

inline int t_activation(Tape& t, int a, ActKind kind) {
  static const bool r = register_op("activation");
  (void)r;
  Tensor y = activation_fwd(kind, t.value(a));
  // backward reads the op's own output, captured by value
  Tensor ycopy = y;
  return t.record("activation", {a}, std::move(y),
                  [a, kind, ycopy = std::move(ycopy)](Tape& tp, const Tensor& g) {
                    Tensor gx = g;
                    double* pg = gx.data();
                    const double* py = ycopy.data();
                    switch (kind) {
                      case ActKind::relu:
                        // subgradient at exactly 0 is 0
                        for (std::int64_t i = 0; i < gx.size(); ++i)
                          if (py[i] <= 0.0) pg[i] = 0.0;
                        break;
                      case ActKind::sigmoid:
                        for (std::int64_t i = 0; i < gx.size(); ++i)
                          pg[i] *= py[i] * (1.0 - py[i]);
                        break;
                      case ActKind::tanh_:
                        for (std::int64_t i = 0; i < gx.size(); ++i)
                          pg[i] *= 1.0 - py[i] * py[i];
                        break;
                    }
                    tp.accum(a, gx);
                  });
}

inline int t_relu(Tape& t, int a) { return t_activation(t, a, ActKind::relu); }

// ---------------------------------------------------------------------------
// conv2d: x (N,C,H,W), w (F,C,kh,kw), b (F) -> (N,F,Ho,Wo)
// ---------------------------------------------------------------------------

inline void conv2d_check(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 4) throw ShapeError("conv2d input must be (N,C,H,W), got " + shape_str(x.shape()));
  if (w.rank() != 4)
    throw ShapeError("conv2d weights must be (F,C,kh,kw), got " + shape_str(w.shape()));
  if (w.dim(2) < 1 || w.dim(3) < 1) throw ValueError("conv2d kernel dims must be >= 1");
  if (x.dim(1) != w.dim(1))
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) +
                     " vs weights " + shape_str(w.shape()));
  if (b.rank() != 1 || b.dim(0) != w.dim(0))
    throw ShapeError("conv2d bias must be (" + std::to_string(w.dim(0)) + "), got " +
                     shape_str(b.shape()));
}

inline Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& b, std::int64_t s,
                         std::int64_t p) {
  conv2d_check(x, w, b);
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t Ho = conv_out_dim(H, kh, s, p), Wo = conv_out_dim(W, kw, s, p);
  if (Ho < 1 || Wo < 1)
    throw ShapeError("conv2d degenerate output for input " + shape_str(x.shape()) +
                     " with kernel " + shape_str(w.shape()));
  Tensor wmat = w.reshaped({F, C * kh * kw});
  Tensor y({N, F, Ho, Wo});
  parallel_for(0, N, [&](std::int64_t n) {
    Tensor cols = im2col(get_sample(x, n), kh, kw, s, p);
    Tensor ymat = matmul(wmat, cols);
    Tensor yn = elementwise_bcast(EwOp::add, ymat.reshaped({F, Ho, Wo}), b, 0);
    put_sample(y, n, yn);
  });
  return y;
}

// Fault-injection switch used by the gradient-check tests: when set, the conv
// backward drops the last output column from the weight-gradient accumulation
// (an off-by-one), which a correct finite-difference check must flag.
inline bool& conv_backward_fault() {
  thread_local bool fault = false;
  return fault;
}

inline int t_conv2d(Tape& t, int x, int w, int b, std::int64_t s, std::int64_t p) {
  static const bool r = register_op("conv2d");
  (void)r;
  Tensor y = conv2d_fwd(t.value(x), t.value(w), t.value(b), s, p);
  return t.record(
      "conv2d", {x, w, b}, std::move(y), [x, w, b, s, p](Tape& tp, const Tensor& g) {
        const Tensor& xv = tp.value(x);
        const Tensor& wv = tp.value(w);
        const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
        const std::int64_t F = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
        const std::int64_t Ho = g.dim(2), Wo = g.dim(3);
        Tensor wmat = wv.reshaped({F, C * kh * kw});
        Tensor wmat_t = transpose(wmat);
        Tensor gx({N, C, H, W});
        // per-sample weight/bias gradients, reduced in sample order below so
        // results do not depend on the thread count
        std::vector<Tensor> gw_per(static_cast<std::size_t>(N));
        std::vector<Tensor> gb_per(static_cast<std::size_t>(N));
        parallel_for(0, N, [&](std::int64_t n) {
          // im2col is recomputed rather than saved from the forward pass
          Tensor cols = im2col(get_sample(xv, n), kh, kw, s, p);
          Tensor gmat = get_sample(g, n).reshaped({F, Ho * Wo});
          if (conv_backward_fault() && Ho * Wo > 1) {
            Tensor gbad = gmat;  // zero the last column: off-by-one fault
            for (std::int64_t f = 0; f < F; ++f) gbad(f, Ho * Wo - 1) = 0.0;
            gw_per[static_cast<std::size_t>(n)] = matmul(gbad, transpose(cols));
          } else {
            gw_per[static_cast<std::size_t>(n)] = matmul(gmat, transpose(cols));
          }
          put_sample(gx, n, col2im(matmul(wmat_t, gmat), C, H, W, kh, kw, s, p));
          Tensor gb({F});
          for (std::int64_t f = 0; f < F; ++f) {
            double acc = 0;
            const double* row = gmat.data() + f * Ho * Wo;
            for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += row[i];
            gb[f] = acc;
          }
          gb_per[static_cast<std::size_t>(n)] = std::move(gb);
        });
        Tensor gw = Tensor::zeros({F, C * kh * kw});
        Tensor gb = Tensor::zeros({F});
        for (std::int64_t n = 0; n < N; ++n) {
          axpy(1.0, gw_per[static_cast<std::size_t>(n)], gw);
          axpy(1.0, gb_per[static_cast<std::size_t>(n)], gb);
        }
        tp.accum(x, gx);
        tp.accum(w, gw.reshaped(wv.shape()));
        tp.accum(b, gb);
      });
}

// ---------------------------------------------------------------------------
// mlpconv: conv stage followed by ReLU, repeated; stages after the first are
// restricted to 1x1 kernels (the cross-channel MLP view).
// ---------------------------------------------------------------------------

struct MlpconvStage {
  int w = -1;  // tape id of (F,C,kh,kw) weights
  int b = -1;  // tape id of (F) bias
  std::int64_t stride = 1;
  std::int64_t pad = 0;
};

inline int t_mlpconv(Tape& t, int x, const std::vector<MlpconvStage>& stages) {
  if (stages.empty()) throw ValueError("mlpconv needs at least one stage");
  int cur = x;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    const Tensor& wv = t.value(st.w);
    if (i > 0 && (wv.dim(2) != 1 || wv.dim(3) != 1))
      throw ValueError("mlpconv stage " + std::to_string(i) +
                       " must use a 1x1 kernel, got " + shape_str(wv.shape()));
    cur = t_conv2d(t, cur, st.w, st.b, st.stride, st.pad);
    cur = t_relu(t, cur);
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

enum class PoolKind { max, avg };

struct PoolResult {
  Tensor y;
  // flat index into the input of the winning cell, one per output element
  // (max pooling only; empty for avg)
  std::vector<std::int64_t> argmax;
};

inline PoolResult pool2d_fwd(PoolKind kind, const Tensor& x, std::int64_t k, std::int64_t s,
                             std::int64_t p) {
  if (x.rank() != 4) throw ShapeError("pool2d input must be (N,C,H,W), got " + shape_str(x.shape()));
  if (k < 1 || s < 1 || p < 0 || p >= k) throw ValueError("pool2d: bad window/stride/pad");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Ho = conv_out_dim(H, k, s, p), Wo = conv_out_dim(W, k, s, p);
  if (Ho < 1 || Wo < 1)
    throw ShapeError("pool2d degenerate output for input " + shape_str(x.shape()) +
                     " with window " + std::to_string(k));
  PoolResult res;
  res.y = Tensor({N, C, Ho, Wo});
  if (kind == PoolKind::max) res.argmax.assign(static_cast<std::size_t>(res.y.size()), -1);
  const double inv_area = 1.0 / static_cast<double>(k * k);
  double kink = std::numeric_limits<double>::infinity();
  const double* px = x.data();
  double* py = res.y.data();
  std::int64_t out_i = 0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const double* plane = px + (n * C + c) * H * W;
      const std::int64_t plane_off = (n * C + c) * H * W;
      for (std::int64_t oi = 0; oi < Ho; ++oi)
        for (std::int64_t oj = 0; oj < Wo; ++oj, ++out_i) {
          if (kind == PoolKind::avg) {
            double acc = 0;
            for (std::int64_t di = 0; di < k; ++di) {
              const std::int64_t ii = oi * s - p + di;
              if (ii < 0 || ii >= H) continue;
              for (std::int64_t dj = 0; dj < k; ++dj) {
                const std::int64_t jj = oj * s - p + dj;
                if (jj >= 0 && jj < W) acc += plane[ii * W + jj];
              }
            }
            py[out_i] = acc * inv_area;  // divisor includes padded cells
          } else {
            double best = -std::numeric_limits<double>::infinity();
            double second = best;
            std::int64_t best_idx = -1;
            for (std::int64_t di = 0; di < k; ++di) {
              const std::int64_t ii = oi * s - p + di;
              if (ii < 0 || ii >= H) continue;
              for (std::int64_t dj = 0; dj < k; ++dj) {
                const std::int64_t jj = oj * s - p + dj;
                if (jj < 0 || jj >= W) continue;
                const double v = plane[ii * W + jj];
                if (v > best) {  // strict: ties keep the first row-major cell
                  second = best;
                  best = v;
                  best_idx = plane_off + ii * W + jj;
                } else if (v > second) {
                  second = v;
                }
              }
            }
            py[out_i] = best;
            res.argmax[static_cast<std::size_t>(out_i)] = best_idx;
            // top-2 gap guards gradcheck against argmax flips under small
            // perturbations. An exact 0/0 tie is excluded: those cells are
            // ReLU-clipped zeros pinned at zero slope (the ReLU meter itself
            // catches pre-activations near enough to zero to unclip).
            if (std::isfinite(second) && !(best == 0.0 && second == 0.0))
              kink = std::min(kink, best - second);
          }
        }
    }
  if (kind == PoolKind::max) kink_note(kink);
  return res;
}

inline int t_pool2d(Tape& t, int x, PoolKind kind, std::int64_t k, std::int64_t s,
                    std::int64_t p) {
  static const bool r = register_op("pool2d");
  (void)r;
  PoolResult res = pool2d_fwd(kind, t.value(x), k, s, p);
  if (kind == PoolKind::max) {
    auto argmax = std::move(res.argmax);
    return t.record("pool2d", {x}, std::move(res.y),
                    [x, argmax = std::move(argmax)](Tape& tp, const Tensor& g) {
                      Tensor gx = Tensor::zeros(tp.value(x).shape());
                      double* pgx = gx.data();
                      const double* pg = g.data();
                      for (std::size_t i = 0; i < argmax.size(); ++i)
                        pgx[argmax[i]] += pg[static_cast<std::int64_t>(i)];
                      tp.accum(x, gx);
                    });
  }
  return t.record("pool2d", {x}, std::move(res.y),
                  [x, k, s, p](Tape& tp, const Tensor& g) {
                    const Tensor& xv = tp.value(x);
                    const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2),
                                       W = xv.dim(3);
                    const std::int64_t Ho = g.dim(2), Wo = g.dim(3);
                    const double inv_area = 1.0 / static_cast<double>(k * k);
                    Tensor gx = Tensor::zeros(xv.shape());
                    double* pgx = gx.data();
                    const double* pg = g.data();
                    for (std::int64_t n = 0; n < N; ++n)
                      for (std::int64_t c = 0; c < C; ++c) {
                        double* plane = pgx + (n * C + c) * H * W;
                        const double* gplane = pg + (n * C + c) * Ho * Wo;
                        for (std::int64_t oi = 0; oi < Ho; ++oi)
                          for (std::int64_t oj = 0; oj < Wo; ++oj) {
                            const double gv = gplane[oi * Wo + oj] * inv_area;
                            for (std::int64_t di = 0; di < k; ++di) {
                              const std::int64_t ii = oi * s - p + di;
                              if (ii < 0 || ii >= H) continue;
                              for (std::int64_t dj = 0; dj < k; ++dj) {
                                const std::int64_t jj = oj * s - p + dj;
                                if (jj >= 0 && jj < W) plane[ii * W + jj] += gv;
                              }
                            }
                          }
                      }
                    tp.accum(x, gx);
                  });
}

// ---------------------------------------------------------------------------
// Global average pooling: (N,C,H,W) -> (N,C). No learnable parameters.
// ---------------------------------------------------------------------------

inline Tensor gap_fwd(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("gap input must be (N,C,H,W), got " + shape_str(x.shape()));
  return reduce(ReduceOp::mean, x, {2, 3});
}

inline int t_gap(Tape& t, int x) {
  static const bool r = register_op("gap");
  (void)r;
  Tensor y = gap_fwd(t.value(x));
  return t.record("gap", {x}, std::move(y), [x](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(x);
    const std::int64_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const double inv = 1.0 / static_cast<double>(H * W);
    Tensor gx(xv.shape());
    double* pgx = gx.data();
    const double* pg = g.data();
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const double gv = pg[n * C + c] * inv;
        double* plane = pgx + (n * C + c) * H * W;
        for (std::int64_t i = 0; i < H * W; ++i) plane[i] = gv;
      }
    tp.accum(x, gx);
  });
}

// ---------------------------------------------------------------------------
// Dense: x (N,D) * W (D,M) + b (M)
// ---------------------------------------------------------------------------

inline Tensor dense_fwd(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2) throw ShapeError("dense input must be (N,D), got " + shape_str(x.shape()));
  if (w.rank() != 2 || b.rank() != 1 || b.dim(0) != w.dim(1))
    throw ShapeError("dense params must be (D,M) and (M), got " + shape_str(w.shape()) +
                     " and " + shape_str(b.shape()));
  if (x.dim(1) != w.dim(0))
    throw ShapeError("dense feature mismatch: " + shape_str(x.shape()) + " vs " +
                     shape_str(w.shape()));
  return elementwise_bcast(EwOp::add, matmul(x, w), b, 1);
}

inline int t_dense(Tape& t, int x, int w, int b) {
  // composition of already-registered primitives keeps one backward source
  dense_fwd(t.value(x), t.value(w), t.value(b));  // shape validation up front
  return t_bias_add(t, t_matmul(t, x, w), b, 1);
}

// Flatten (N,C,H,W) or (N,D) to (N,D).
inline int t_flatten(Tape& t, int x) {
  const Tensor& v = t.value(x);
  if (v.rank() == 2) return x;
  if (v.rank() != 4)
    throw ShapeError("flatten expects (N,C,H,W) or (N,D), got " + shape_str(v.shape()));
  return t_reshape(t, x, {v.dim(0), v.dim(1) * v.dim(2) * v.dim(3)});
}

// ---------------------------------------------------------------------------
// Dropout (paper scheme). Train: zero each unit w.p. p, no rescale.
// Test: multiply by p. The drawn mask is returned so a gradient check can
// freeze it across perturbed evaluations.
// ---------------------------------------------------------------------------

enum class DropoutMode { train, test };

inline Tensor dropout_mask(const Shape& shape, double p, Rng& rng) {
  if (!(p > 0.0 && p < 1.0))
    throw ValueError("dropout p must be in (0,1), got " + std::to_string(p));
  Tensor mask(shape);
  for (auto& m : mask.raw()) m = rng.uniform() < p ? 0.0 : 1.0;
  return mask;
}

struct DropoutOut {
  int node = -1;
  Tensor mask;  // the applied train-mode mask (all-ones in test mode)
};

// Apply a caller-supplied mask (gradcheck freezes masks through here).
inline int t_dropout_masked(Tape& t, int x, const Tensor& mask) {
  static const bool r = register_op("dropout");
  (void)r;
  Tensor y = t.value(x) * mask;
  Tensor mcopy = mask;
  return t.record("dropout", {x}, std::move(y),
                  [x, mcopy = std::move(mcopy)](Tape& tp, const Tensor& g) {
                    tp.accum(x, g * mcopy);
                  });
}

inline DropoutOut t_dropout(Tape& t, int x, double p, DropoutMode mode, Rng& rng) {
  if (!(p > 0.0 && p < 1.0))
    throw ValueError("dropout p must be in (0,1), got " + std::to_string(p));
  DropoutOut out;
  if (mode == DropoutMode::test) {
    out.node = t_scale(t, x, p);
    out.mask = Tensor::ones(t.value(x).shape());
    return out;
  }
  out.mask = dropout_mask(t.value(x).shape(), p, rng);
  out.node = t_dropout_masked(t, x, out.mask);
  return out;
}

// ---------------------------------------------------------------------------
// Softmax and softmax cross-entropy (fused, row-max stabilized)
// ---------------------------------------------------------------------------

// Row softmax of (N,K) logits.
inline Tensor softmax_fwd(const Tensor& z) {
  if (z.rank() != 2) throw ShapeError("softmax input must be (N,K), got " + shape_str(z.shape()));
  const std::int64_t N = z.dim(0), K = z.dim(1);
  Tensor p(z.shape());
  for (std::int64_t n = 0; n < N; ++n) {
    const double* row = z.data() + n * K;
    double* prow = p.data() + n * K;
    double mx = row[0];
    for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double sum = 0;
    for (std::int64_t k = 0; k < K; ++k) {
      prow[k] = std::exp(row[k] - mx);
      sum += prow[k];
    }
    for (std::int64_t k = 0; k < K; ++k) prow[k] /= sum;
  }
  return p;
}

inline int t_softmax(Tape& t, int z) {
  static const bool r = register_op("softmax");
  (void)r;
  Tensor p = softmax_fwd(t.value(z));
  Tensor pcopy = p;
  return t.record("softmax", {z}, std::move(p),
                  [z, pcopy = std::move(pcopy)](Tape& tp, const Tensor& g) {
                    const std::int64_t N = pcopy.dim(0), K = pcopy.dim(1);
                    Tensor gz(pcopy.shape());
                    for (std::int64_t n = 0; n < N; ++n) {
                      const double* prow = pcopy.data() + n * K;
                      const double* grow = g.data() + n * K;
                      double dot = 0;
                      for (std::int64_t k = 0; k < K; ++k) dot += prow[k] * grow[k];
                      double* out = gz.data() + n * K;
                      for (std::int64_t k = 0; k < K; ++k) out[k] = prow[k] * (grow[k] - dot);
                    }
                    tp.accum(z, gz);
                  });
}

inline void check_labels(const std::vector<std::int64_t>& labels, std::int64_t N,
                         std::int64_t K) {
  if (static_cast<std::int64_t>(labels.size()) != N)
    throw ValueError("labels length " + std::to_string(labels.size()) +
                     " does not match batch " + std::to_string(N));
  for (std::int64_t i = 0; i < N; ++i)
    if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= K)
      throw ValueError("label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                       " out of range [0," + std::to_string(K) + ")");
}

// Mean over the batch of -log softmax(z)[label].
inline double softmax_ce_fwd(const Tensor& z, const std::vector<std::int64_t>& labels) {
  Tensor p = softmax_fwd(z);
  const std::int64_t N = z.dim(0), K = z.dim(1);
  check_labels(labels, N, K);
  double loss = 0;
  for (std::int64_t n = 0; n < N; ++n)
    loss -= std::log(p(n, labels[static_cast<std::size_t>(n)]));
  return loss / static_cast<double>(N);
}

inline int t_softmax_ce(Tape& t, int z, std::vector<std::int64_t> labels) {
  static const bool r = register_op("softmax_ce");
  (void)r;
  const Tensor& zv = t.value(z);
  if (zv.rank() != 2)
    throw ShapeError("softmax_ce logits must be (N,K), got " + shape_str(zv.shape()));
  Tensor p = softmax_fwd(zv);
  const std::int64_t N = zv.dim(0), K = zv.dim(1);
  check_labels(labels, N, K);
  double loss = 0;
  for (std::int64_t n = 0; n < N; ++n)
    loss -= std::log(p(n, labels[static_cast<std::size_t>(n)]));
  loss /= static_cast<double>(N);
  return t.record("softmax_ce", {z}, Tensor::scalar(loss),
                  [z, p = std::move(p), labels = std::move(labels)](Tape& tp, const Tensor& g) {
                    const std::int64_t N = p.dim(0), K = p.dim(1);
                    Tensor gz = p;  // (softmax - onehot)/N, scaled by upstream
                    const double c = g[0] / static_cast<double>(N);
                    for (std::int64_t n = 0; n < N; ++n) {
                      double* row = gz.data() + n * K;
                      row[labels[static_cast<std::size_t>(n)]] -= 1.0;
                      for (std::int64_t k = 0; k < K; ++k) row[k] *= c;
                    }
                    tp.accum(z, gz);
                  });
}

// ---------------------------------------------------------------------------
// Channel concat of (N,C_i,H,W) tensors (inception joins branches with it)
// ---------------------------------------------------------------------------

inline int t_concat(Tape& t, const std::vector<int>& ids) {
  static const bool r = register_op("concat");
  (void)r;
  if (ids.empty()) throw ValueError("concat needs at least one input");
  const Tensor& first = t.value(ids[0]);
  if (first.rank() != 4)
    throw ShapeError("concat inputs must be (N,C,H,W), got " + shape_str(first.shape()));
  const std::int64_t N = first.dim(0), H = first.dim(2), W = first.dim(3);
  std::int64_t Ctot = 0;
  std::vector<std::int64_t> chans;
  for (int id : ids) {
    const Tensor& v = t.value(id);
    if (v.rank() != 4 || v.dim(0) != N || v.dim(2) != H || v.dim(3) != W)
      throw ShapeError("concat branch shape " + shape_str(v.shape()) +
                       " incompatible with " + shape_str(first.shape()));
    chans.push_back(v.dim(1));
    Ctot += v.dim(1);
  }
  Tensor y({N, Ctot, H, W});
  for (std::int64_t n = 0; n < N; ++n) {
    std::int64_t coff = 0;
    for (std::size_t bi = 0; bi < ids.size(); ++bi) {
      const Tensor& v = t.value(ids[bi]);
      const std::int64_t Cb = chans[bi];
      std::copy(v.data() + n * Cb * H * W, v.data() + (n + 1) * Cb * H * W,
                y.data() + (n * Ctot + coff) * H * W);
      coff += Cb;
    }
  }
  return t.record("concat", ids, std::move(y),
                  [ids, chans, N, H, W, Ctot](Tape& tp, const Tensor& g) {
                    std::int64_t coff = 0;
                    for (std::size_t bi = 0; bi < ids.size(); ++bi) {
                      const std::int64_t Cb = chans[bi];
                      Tensor gb({N, Cb, H, W});
                      for (std::int64_t n = 0; n < N; ++n)
                        std::copy(g.data() + (n * Ctot + coff) * H * W,
                                  g.data() + (n * Ctot + coff + Cb) * H * W,
                                  gb.data() + n * Cb * H * W);
                      tp.accum(ids[bi], gb);
                      coff += Cb;
                    }
                  });
}

}  // namespace convkit

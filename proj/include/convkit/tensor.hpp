#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "convkit/error.hpp"

namespace convkit {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

/// Dense row-major real64 array, rank 1..4. The single numeric currency of
/// the framework; values are immutable once handed to another module.
/// Image batches follow the (N,C,H,W) convention throughout.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor eye(std::int64_t n) {
    Tensor t({n, n});
    for (std::int64_t i = 0; i < n; ++i) t.data_[static_cast<std::size_t>(i * n + i)] = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& operator()(std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator()(std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  double& operator()(std::int64_t i, std::int64_t j) {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  double operator()(std::int64_t i, std::int64_t j) const {
    return data_[static_cast<std::size_t>(i * shape_[1] + j)];
  }
  double& operator()(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double operator()(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double& operator()(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  double operator()(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
    return data_[static_cast<std::size_t>(((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  // Same data, new shape (sizes must agree).
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  static void validate_shape(const Shape& s) {
    if (s.empty() || s.size() > 4)
      throw ShapeError("tensor rank must be 1..4, got shape " + shape_str(s));
    for (auto d : s)
      if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
  }

  Shape shape_;
  std::vector<double> data_;
};

enum class EwOp { add, sub, mul, div };

inline double ew_apply(EwOp op, double a, double b) {
  switch (op) {
    case EwOp::add: return a + b;
    case EwOp::sub: return a - b;
    case EwOp::mul: return a * b;
    case EwOp::div: return a / b;
  }
  return 0;
}

// Elementwise combine of equal-shaped tensors.
inline Tensor elementwise(EwOp op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("elementwise shape mismatch: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  Tensor out = a;
  const double* pb = b.data();
  double* po = out.data();
  for (std::int64_t i = 0, n = out.size(); i < n; ++i) po[i] = ew_apply(op, po[i], pb[i]);
  return out;
}

// Elementwise with rank-1 b broadcast along the given axis of a.
inline Tensor elementwise_bcast(EwOp op, const Tensor& a, const Tensor& b, int axis) {
  if (axis < 0 || axis >= a.rank())
    throw ValueError("broadcast axis " + std::to_string(axis) + " invalid for rank " +
                     std::to_string(a.rank()));
  if (b.rank() != 1 || b.dim(0) != a.dim(axis))
    throw ShapeError("broadcast shape mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()) + " along axis " + std::to_string(axis));
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.dim(i);
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::int64_t d = a.dim(axis);
  Tensor out = a;
  double* po = out.data();
  const double* pb = b.data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t j = 0; j < d; ++j) {
      double bv = pb[j];
      double* row = po + (o * d + j) * inner;
      for (std::int64_t k = 0; k < inner; ++k) row[k] = ew_apply(op, row[k], bv);
    }
  return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(EwOp::add, a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(EwOp::sub, a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(EwOp::mul, a, b); }

inline Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (auto& v : out.raw()) v *= s;
  return out;
}

inline Tensor map(const Tensor& a, const std::function<double(double)>& f) {
  Tensor out = a;
  for (auto& v : out.raw()) v = f(v);
  return out;
}

inline void axpy(double alpha, const Tensor& x, Tensor& y) {
  if (!x.same_shape(y))
    throw ShapeError("axpy shape mismatch: " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  const double* px = x.data();
  double* py = y.data();
  for (std::int64_t i = 0, n = y.size(); i < n; ++i) py[i] += alpha * px[i];
}

inline double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size())
    throw ShapeError("dot size mismatch: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  double s = 0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::int64_t i = 0, n = a.size(); i < n; ++i) s += pa[i] * pb[i];
  return s;
}

// C = A(m,k) * B(k,n). Serial on purpose; batch-level ops parallelize above it.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul needs rank-2 operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul inner dimensions disagree: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    double* crow = pc + i * n;
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose needs rank-2, got " + shape_str(a.shape()));
  const std::int64_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) t(j, i) = a(i, j);
  return t;
}

enum class ReduceOp { sum, mean, max };

// Reduce over the named axes; reduced axes are removed from the shape.
// A full reduction yields shape {1}.
inline Tensor reduce(ReduceOp op, const Tensor& x, const std::vector<int>& axes) {
  const int r = static_cast<int>(x.rank());
  std::vector<bool> red(static_cast<std::size_t>(r), false);
  for (int ax : axes) {
    if (ax < 0 || ax >= r)
      throw ValueError("reduce axis " + std::to_string(ax) + " invalid for rank " +
                       std::to_string(r));
    if (red[static_cast<std::size_t>(ax)])
      throw ValueError("reduce axis " + std::to_string(ax) + " repeated");
    red[static_cast<std::size_t>(ax)] = true;
  }
  Shape out_shape;
  for (int i = 0; i < r; ++i)
    if (!red[static_cast<std::size_t>(i)]) out_shape.push_back(x.dim(i));
  bool full = out_shape.empty();
  if (full) out_shape = {1};

  std::int64_t count = 1;
  for (int i = 0; i < r; ++i)
    if (red[static_cast<std::size_t>(i)]) count *= x.dim(i);

  Tensor out = (op == ReduceOp::max)
                   ? Tensor::full(out_shape, -std::numeric_limits<double>::infinity())
                   : Tensor::zeros(out_shape);

  // strides of x, and the flat output index for each input index
  std::vector<std::int64_t> xstride(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    xstride[static_cast<std::size_t>(i)] =
        xstride[static_cast<std::size_t>(i + 1)] * x.dim(i + 1);
  std::vector<std::int64_t> ostride(static_cast<std::size_t>(r), 0);
  {
    std::int64_t acc = 1;
    for (int i = r - 1; i >= 0; --i) {
      if (!red[static_cast<std::size_t>(i)]) {
        ostride[static_cast<std::size_t>(i)] = acc;
        acc *= x.dim(i);
      }
    }
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  const double* px = x.data();
  double* po = out.data();
  const std::int64_t n = x.size();
  std::int64_t oflat = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    if (op == ReduceOp::max)
      po[oflat] = std::max(po[oflat], px[flat]);
    else
      po[oflat] += px[flat];
    // advance the multi-index
    for (int i = r - 1; i >= 0; --i) {
      auto ui = static_cast<std::size_t>(i);
      ++idx[ui];
      oflat += ostride[ui];
      if (idx[ui] < x.dim(i)) break;
      oflat -= ostride[ui] * x.dim(i);
      idx[ui] = 0;
    }
  }
  if (op == ReduceOp::mean)
    for (auto& v : out.raw()) v /= static_cast<double>(count);
  return out;
}

inline double reduce_all(ReduceOp op, const Tensor& x) {
  std::vector<int> axes;
  for (int i = 0; i < x.rank(); ++i) axes.push_back(i);
  return reduce(op, x, axes)[0];
}

// Copy out/in the n-th slice along the leading axis (e.g. one image of a
// batch). Tensors carry no stride machinery, so these are copies.
inline Tensor get_sample(const Tensor& x, std::int64_t n) {
  if (x.rank() < 2) throw ShapeError("get_sample needs rank>=2, got " + shape_str(x.shape()));
  Shape sub(x.shape().begin() + 1, x.shape().end());
  const std::int64_t stride = shape_numel(sub);
  Tensor out(sub);
  std::copy(x.data() + n * stride, x.data() + (n + 1) * stride, out.data());
  return out;
}

inline void put_sample(Tensor& x, std::int64_t n, const Tensor& v) {
  Shape sub(x.shape().begin() + 1, x.shape().end());
  if (v.shape() != sub)
    throw ShapeError("put_sample: slice shape " + shape_str(v.shape()) +
                     " does not fit " + shape_str(x.shape()));
  std::copy(v.data(), v.data() + v.size(), x.data() + n * v.size());
}

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t s,
                                 std::int64_t p) {
  return (in + 2 * p - k) / s + 1;
}

// Lower a (C,H,W) image into the (C*kh*kw, H_out*W_out) patch matrix; column
// j holds the receptive-field patch of output position j, zeros outside the
// padded border.
inline Tensor im2col(const Tensor& x, std::int64_t kh, std::int64_t kw, std::int64_t s,
                     std::int64_t p) {
  if (x.rank() != 3) throw ShapeError("im2col needs (C,H,W), got " + shape_str(x.shape()));
  if (kh < 1 || kw < 1 || s < 1 || p < 0) throw ValueError("im2col: bad kernel/stride/pad");
  const std::int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::int64_t Ho = conv_out_dim(H, kh, s, p), Wo = conv_out_dim(W, kw, s, p);
  if (Ho < 1 || Wo < 1)
    throw ShapeError("im2col degenerate output " + std::to_string(Ho) + "x" +
                     std::to_string(Wo) + " for input " + shape_str(x.shape()));
  Tensor cols({C * kh * kw, Ho * Wo});
  double* pc = cols.data();
  const double* px = x.data();
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t di = 0; di < kh; ++di)
      for (std::int64_t dj = 0; dj < kw; ++dj) {
        double* row = pc + ((c * kh + di) * kw + dj) * (Ho * Wo);
        for (std::int64_t oi = 0; oi < Ho; ++oi) {
          const std::int64_t ii = oi * s - p + di;
          if (ii < 0 || ii >= H) {
            // row stays zero for this output row
            row += Wo;
            continue;
          }
          const double* xrow = px + (c * H + ii) * W;
          for (std::int64_t oj = 0; oj < Wo; ++oj) {
            const std::int64_t jj = oj * s - p + dj;
            *row++ = (jj < 0 || jj >= W) ? 0.0 : xrow[jj];
          }
        }
      }
  return cols;
}

// Adjoint of im2col: scatter-add columns back onto a (C,H,W) canvas.
inline Tensor col2im(const Tensor& cols, std::int64_t C, std::int64_t H, std::int64_t W,
                     std::int64_t kh, std::int64_t kw, std::int64_t s, std::int64_t p) {
  const std::int64_t Ho = conv_out_dim(H, kh, s, p), Wo = conv_out_dim(W, kw, s, p);
  if (cols.rank() != 2 || cols.dim(0) != C * kh * kw || cols.dim(1) != Ho * Wo)
    throw ShapeError("col2im: columns " + shape_str(cols.shape()) +
                     " do not match target geometry");
  Tensor x({C, H, W});
  double* px = x.data();
  const double* pc = cols.data();
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t di = 0; di < kh; ++di)
      for (std::int64_t dj = 0; dj < kw; ++dj) {
        const double* row = pc + ((c * kh + di) * kw + dj) * (Ho * Wo);
        for (std::int64_t oi = 0; oi < Ho; ++oi) {
          const std::int64_t ii = oi * s - p + di;
          if (ii < 0 || ii >= H) {
            row += Wo;
            continue;
          }
          double* xrow = px + (c * H + ii) * W;
          for (std::int64_t oj = 0; oj < Wo; ++oj) {
            const std::int64_t jj = oj * s - p + dj;
            double v = *row++;
            if (jj >= 0 && jj < W) xrow[jj] += v;
          }
        }
      }
  return x;
}

}  // namespace convkit

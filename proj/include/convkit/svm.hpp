#pragma once

// Soft-margin binary SVM trained by SMO (maximal-violating-pair working set),
// with linear and RBF kernels, per-feature range scaling, stratified k-fold
// cross-validation, and a grid search over (C, gamma).
//
// Labels are {-1, +1} throughout; +1 is the "positive" (diseased) class for
// sensitivity/specificity/F1 reporting. Decision ties (f == 0) predict +1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "convkit/dataio.hpp"
#include "convkit/error.hpp"
#include "convkit/rng.hpp"
#include "convkit/tensor.hpp"

namespace convkit {

// -------------------------------------------------------------------------
// kernels
// -------------------------------------------------------------------------

enum class KernelKind { linear, rbf };

struct KernelDesc {
  KernelKind kind = KernelKind::linear;
  double gamma = 0.1;  // rbf only

  void validate() const {
    if (kind == KernelKind::rbf && !(gamma > 0.0))
      throw ConfigError("KernelDesc: rbf gamma must be > 0, got " + std::to_string(gamma));
  }
};

inline double kernel_eval(const KernelDesc& k, const double* a, const double* b,
                          std::int64_t d) {
  if (k.kind == KernelKind::linear) {
    double s = 0.0;
    for (std::int64_t i = 0; i < d; ++i) s += a[i] * b[i];
    return s;
  }
  double q = 0.0;
  for (std::int64_t i = 0; i < d; ++i) {
    const double t = a[i] - b[i];
    q += t * t;
  }
  return std::exp(-k.gamma * q);
}

// dense (n, n) kernel matrix of the rows of X (rank-2)
inline Tensor kernel_matrix(const KernelDesc& k, const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("kernel_matrix: features must be rank-2");
  const std::int64_t n = x.dim(0), d = x.dim(1);
  Tensor m({n, n});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i; j < n; ++j) {
      const double v = kernel_eval(k, &x.data()[i * d], &x.data()[j * d], d);
      m(i, j) = v;
      m(j, i) = v;
    }
  return m;
}

// -------------------------------------------------------------------------
// feature scaling
// -------------------------------------------------------------------------

struct ScaleRanges {
  std::vector<double> lo, hi;
  bool empty() const { return lo.empty(); }
};

// per-feature (min, max) over the training split only
inline ScaleRanges scale_fit(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("scale_fit: features must be rank-2");
  const std::int64_t n = x.dim(0), d = x.dim(1);
  if (n < 1) throw ValueError("scale_fit: empty feature matrix");
  ScaleRanges r;
  r.lo.assign(static_cast<std::size_t>(d), 0.0);
  r.hi.assign(static_cast<std::size_t>(d), 0.0);
  for (std::int64_t j = 0; j < d; ++j) {
    double lo = x(0, j), hi = x(0, j);
    for (std::int64_t i = 1; i < n; ++i) {
      lo = std::min(lo, x(i, j));
      hi = std::max(hi, x(i, j));
    }
    r.lo[static_cast<std::size_t>(j)] = lo;
    r.hi[static_cast<std::size_t>(j)] = hi;
  }
  return r;
}

// map each feature to [0,1] by (x - min)/(max - min); constant training
// columns map to 0. Output is clamped to [-0.5, 1.5] — a no-op for the
// data the ranges were fit on, a safety clamp for out-of-range test data.
inline Tensor scale_apply(const Tensor& x, const ScaleRanges& r) {
  if (x.rank() != 2) throw ShapeError("scale_apply: features must be rank-2");
  const std::int64_t n = x.dim(0), d = x.dim(1);
  if (static_cast<std::size_t>(d) != r.lo.size())
    throw ShapeError("scale_apply: " + std::to_string(d) + " features but ranges hold " +
                     std::to_string(r.lo.size()));
  Tensor out({n, d});
  for (std::int64_t j = 0; j < d; ++j) {
    const double lo = r.lo[static_cast<std::size_t>(j)];
    const double hi = r.hi[static_cast<std::size_t>(j)];
    const double span = hi - lo;
    for (std::int64_t i = 0; i < n; ++i) {
      // division (not reciprocal multiply) keeps in-range data exactly in
      // [0,1]: the max maps to span/span == 1.0, so the clamp is a no-op on
      // the data the ranges were fit on and re-fitting scaled data yields
      // the identity map bit-exactly
      double v = span > 0.0 ? (x(i, j) - lo) / span : 0.0;
      v = std::min(1.5, std::max(-0.5, v));
      out(i, j) = v;
    }
  }
  return out;
}

// -------------------------------------------------------------------------
// the model and SMO training
// -------------------------------------------------------------------------

struct SvmModel {
  Tensor support_x{Shape{1, 1}};  // (m, d) support vectors
  std::vector<double> coef;       // alpha_i * y_i per support vector
  double b = 0.0;
  KernelDesc kernel;
  double C = 1.0;
  ScaleRanges ranges;  // applied by svm_decision when non-empty
  // diagnostics (not serialized): full duals in training order
  std::vector<double> alphas;
};

namespace detail {

inline void check_binary_labels(const std::vector<int>& y) {
  bool pos = false, neg = false;
  for (int v : y) {
    if (v == 1)
      pos = true;
    else if (v == -1)
      neg = true;
    else
      throw ValueError("labels must be -1 or +1, got " + std::to_string(v));
  }
  if (!pos || !neg) throw ValueError("svm_train: need at least one example per class");
}

}  // namespace detail

// SMO with the maximal-violating-pair working set (Keerthi's b_up/b_low
// rule). Stops when the KKT violation gap b_low - b_up drops below 1e-3 or
// after 1e5 pair updates.
inline SvmModel svm_train(const Tensor& x, const std::vector<int>& y, double C,
                          const KernelDesc& kernel) {
  if (x.rank() != 2) throw ShapeError("svm_train: features must be rank-2");
  const std::int64_t n = x.dim(0), d = x.dim(1);
  if (static_cast<std::size_t>(n) != y.size())
    throw ValueError("svm_train: " + std::to_string(n) + " rows but " +
                     std::to_string(y.size()) + " labels");
  if (!(C > 0.0)) throw ConfigError("svm_train: C must be > 0");
  kernel.validate();
  detail::check_binary_labels(y);

  const Tensor k = kernel_matrix(kernel, x);
  std::vector<double> alpha(static_cast<std::size_t>(n), 0.0);
  // F_i = sum_j alpha_j y_j K_ij - y_i  (decision sans bias, minus target)
  std::vector<double> f(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) f[static_cast<std::size_t>(i)] = -y[static_cast<std::size_t>(i)];

  const double tol = 1e-3;
  const long max_iters = 100000;
  double b_up = 0.0, b_low = 0.0;

  // working pair: i_up minimizes F over I_up, i_low maximizes F over I_low
  auto scan = [&](std::int64_t& i_up, std::int64_t& i_low) {
    i_up = -1;
    i_low = -1;
    b_up = 0.0;
    b_low = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const std::size_t si = static_cast<std::size_t>(i);
      const bool in_up = (y[si] == 1 && alpha[si] < C) || (y[si] == -1 && alpha[si] > 0.0);
      const bool in_low = (y[si] == -1 && alpha[si] < C) || (y[si] == 1 && alpha[si] > 0.0);
      if (in_up && (i_up < 0 || f[si] < b_up)) {
        i_up = i;
        b_up = f[si];
      }
      if (in_low && (i_low < 0 || f[si] > b_low)) {
        i_low = i;
        b_low = f[si];
      }
    }
  };

  for (long iter = 0; iter < max_iters; ++iter) {
    std::int64_t i_up = -1, i_low = -1;
    scan(i_up, i_low);
    if (i_up < 0 || i_low < 0 || b_low - b_up <= tol) break;

    const std::size_t s1 = static_cast<std::size_t>(i_up), s2 = static_cast<std::size_t>(i_low);
    const double y1 = y[s1], y2 = y[s2];
    const double a1_old = alpha[s1], a2_old = alpha[s2];
    const double s = y1 * y2;

    // bounds for the new alpha2 (the i_low multiplier)
    double lo, hi;
    if (s < 0.0) {
      lo = std::max(0.0, a2_old - a1_old);
      hi = std::min(C, C + a2_old - a1_old);
    } else {
      lo = std::max(0.0, a1_old + a2_old - C);
      hi = std::min(C, a1_old + a2_old);
    }
    double eta = k(i_up, i_up) + k(i_low, i_low) - 2.0 * k(i_up, i_low);
    if (eta < 1e-12) eta = 1e-12;  // PSD kernels keep eta >= 0; guard 0
    double a2 = a2_old + y2 * (f[s1] - f[s2]) / eta;
    a2 = std::min(hi, std::max(lo, a2));
    double a1 = a1_old + s * (a2_old - a2);
    // snap to the box so epsilon-inside duals don't stall pair selection
    const double snap = 1e-12 * std::max(1.0, C);
    if (a1 < snap) a1 = 0.0;
    if (a1 > C - snap) a1 = C;
    if (a2 < snap) a2 = 0.0;
    if (a2 > C - snap) a2 = C;
    if (std::fabs(a2 - a2_old) < 1e-14 && std::fabs(a1 - a1_old) < 1e-14)
      break;  // numerically stuck at bound
    alpha[s1] = a1;
    alpha[s2] = a2;

    const double d1 = y1 * (a1 - a1_old), d2 = y2 * (a2 - a2_old);
    for (std::int64_t i = 0; i < n; ++i)
      f[static_cast<std::size_t>(i)] += d1 * k(i_up, i) + d2 * k(i_low, i);
  }

  {  // refresh b_up/b_low from the final duals (loop may exit mid-update)
    std::int64_t i_up = -1, i_low = -1;
    scan(i_up, i_low);
  }

  SvmModel model;
  model.kernel = kernel;
  model.C = C;
  model.b = -(b_up + b_low) / 2.0;
  model.alphas = alpha;
  std::int64_t m = 0;
  for (double a : alpha)
    if (a > 1e-12) ++m;
  model.support_x = Tensor({std::max<std::int64_t>(m, 1), d});
  model.coef.clear();
  std::int64_t row = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t si = static_cast<std::size_t>(i);
    if (alpha[si] > 1e-12) {
      for (std::int64_t j = 0; j < d; ++j) model.support_x(row, j) = x(i, j);
      model.coef.push_back(alpha[si] * y[si]);
      ++row;
    }
  }
  if (m == 0) {  // degenerate: keep a zero-weight stub so predict works
    for (std::int64_t j = 0; j < d; ++j) model.support_x(0, j) = 0.0;
    model.coef.push_back(0.0);
  }
  return model;
}

// f(x) = sum_i coef_i K(sv_i, x) + b, applying stored feature ranges first
// when the model carries them
inline std::vector<double> svm_decision(const SvmModel& model, const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("svm_decision: features must be rank-2");
  const Tensor xs = model.ranges.empty() ? x : scale_apply(x, model.ranges);
  const std::int64_t n = xs.dim(0), d = xs.dim(1);
  if (d != model.support_x.dim(1))
    throw ShapeError("svm_decision: feature dimension " + std::to_string(d) +
                     " does not match model dimension " +
                     std::to_string(model.support_x.dim(1)));
  const std::int64_t m = model.support_x.dim(0);
  std::vector<double> out(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < m; ++j)
      s += model.coef[static_cast<std::size_t>(j)] *
           kernel_eval(model.kernel, &model.support_x.data()[j * d], &xs.data()[i * d], d);
    out[static_cast<std::size_t>(i)] = s + model.b;
  }
  return out;
}

// labels from decision values; ties (f == 0) go to +1
inline std::vector<int> svm_predict(const SvmModel& model, const Tensor& x) {
  const std::vector<double> dec = svm_decision(model, x);
  std::vector<int> labels(dec.size());
  for (std::size_t i = 0; i < dec.size(); ++i) labels[i] = dec[i] >= 0.0 ? 1 : -1;
  return labels;
}

// dual objective W(alpha) = sum alpha_i - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij
inline double svm_dual_objective(const Tensor& x, const std::vector<int>& y,
                                 const std::vector<double>& alpha, const KernelDesc& kernel) {
  const std::int64_t n = x.dim(0);
  const Tensor k = kernel_matrix(kernel, x);
  double lin = 0.0, quad = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t si = static_cast<std::size_t>(i);
    lin += alpha[si];
    for (std::int64_t j = 0; j < n; ++j) {
      const std::size_t sj = static_cast<std::size_t>(j);
      quad += alpha[si] * alpha[sj] * y[si] * y[sj] * k(i, j);
    }
  }
  return lin - 0.5 * quad;
}

// -------------------------------------------------------------------------
// folds, confusion metrics, cross-validated grid search
// -------------------------------------------------------------------------

struct FoldPlan {
  int k = 5;
  std::uint64_t seed = 0;
  bool stratified = true;
};

// partition of [0, n) into k folds; stratified keeps per-class fold sizes
// within one of each other
inline std::vector<std::vector<std::int64_t>> make_folds(const std::vector<int>& y,
                                                         const FoldPlan& plan) {
  const std::int64_t n = static_cast<std::int64_t>(y.size());
  if (plan.k < 2) throw ConfigError("FoldPlan: need k >= 2 folds");
  if (n < plan.k) throw ConfigError("FoldPlan: " + std::to_string(n) + " samples cannot fill " +
                                    std::to_string(plan.k) + " folds");
  std::vector<std::vector<std::int64_t>> folds(static_cast<std::size_t>(plan.k));
  auto deal = [&](std::vector<std::int64_t>& idx, std::uint64_t stream) {
    Rng rng(plan.seed, stream);
    for (std::int64_t i = static_cast<std::int64_t>(idx.size()) - 1; i > 0; --i) {
      const std::int64_t j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    for (std::size_t i = 0; i < idx.size(); ++i)
      folds[i % static_cast<std::size_t>(plan.k)].push_back(idx[i]);
  };
  if (plan.stratified) {
    std::vector<std::int64_t> pos, neg;
    for (std::int64_t i = 0; i < n; ++i)
      (y[static_cast<std::size_t>(i)] == 1 ? pos : neg).push_back(i);
    if (static_cast<int>(pos.size()) < plan.k || static_cast<int>(neg.size()) < plan.k)
      throw ConfigError("FoldPlan: stratified " + std::to_string(plan.k) +
                        "-fold needs at least k samples per class (have " +
                        std::to_string(pos.size()) + " positive, " + std::to_string(neg.size()) +
                        " negative)");
    deal(pos, 1);
    deal(neg, 2);
  } else {
    std::vector<std::int64_t> all(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    deal(all, 0);
  }
  for (auto& fold : folds) std::sort(fold.begin(), fold.end());
  return folds;
}

struct ConfusionCounts {
  std::int64_t tp = 0, fn = 0, tn = 0, fp = 0;

  void add(int truth, int predicted) {
    if (truth == 1)
      predicted == 1 ? ++tp : ++fn;
    else
      predicted == -1 ? ++tn : ++fp;
  }
  double accuracy() const {
    const double n = static_cast<double>(tp + fn + tn + fp);
    return n == 0.0 ? 0.0 : static_cast<double>(tp + tn) / n;
  }
  double sensitivity() const {
    return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  double specificity() const {
    return tn + fp == 0 ? 0.0 : static_cast<double>(tn) / static_cast<double>(tn + fp);
  }
  double precision() const {
    return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  double f1() const {
    const double p = precision(), r = sensitivity();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
};

struct CvCell {
  double C = 0.0;
  double gamma = 0.0;  // 0 for linear
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // population std over folds
};

struct CvConfig {
  FoldPlan plan;
  KernelKind kind = KernelKind::rbf;
  std::vector<double> c_grid = {0.1, 1.0, 10.0, 100.0};
  std::vector<double> gamma_grid;  // empty -> {1/d, 0.01, 0.1, 1}
};

struct CvResult {
  double best_C = 0.0;
  double best_gamma = 0.0;
  std::vector<CvCell> cells;
  std::vector<double> fold_accuracy;  // at the best cell
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  ConfusionCounts pooled;  // summed over folds at the best cell
  SvmModel model;          // refit on all data at the best cell, ranges baked in

  // method,accuracy,std,sensitivity,specificity,f1
  std::string csv_row(const std::string& method) const {
    char buf[240];
    std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f,%.4f,%.4f,%.4f", method.c_str(),
                  mean_accuracy, std_accuracy, pooled.sensitivity(), pooled.specificity(),
                  pooled.f1());
    return buf;
  }
};

inline std::string cv_csv_header() { return "method,accuracy,std,sensitivity,specificity,f1"; }

namespace detail {

inline Tensor take_rows(const Tensor& x, const std::vector<std::int64_t>& rows) {
  const std::int64_t d = x.dim(1);
  Tensor out({static_cast<std::int64_t>(rows.size()), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::int64_t j = 0; j < d; ++j) out(static_cast<std::int64_t>(i), j) = x(rows[i], j);
  return out;
}

}  // namespace detail

// Grid search maximizing mean fold accuracy; ties resolve to the smaller C,
// then the smaller gamma. Feature scaling is fit inside each training fold
// (never on held-out data). The returned model is refit on the full set at
// the winning cell with full-set scaling ranges stored on it.
inline CvResult cross_validate(const Tensor& x, const std::vector<int>& y, CvConfig cfg) {
  if (x.rank() != 2) throw ShapeError("cross_validate: features must be rank-2");
  detail::check_binary_labels(y);
  const std::int64_t d = x.dim(1);
  if (cfg.gamma_grid.empty())
    cfg.gamma_grid = {1.0 / static_cast<double>(d), 0.01, 0.1, 1.0};
  std::sort(cfg.c_grid.begin(), cfg.c_grid.end());
  std::sort(cfg.gamma_grid.begin(), cfg.gamma_grid.end());
  if (cfg.kind == KernelKind::linear) cfg.gamma_grid = {0.0};

  const auto folds = make_folds(y, cfg.plan);
  const std::int64_t n = x.dim(0);

  CvResult result;
  bool have_best = false;
  std::vector<double> best_fold_acc;
  ConfusionCounts best_pooled;

  for (double c_value : cfg.c_grid) {
    for (double gamma : cfg.gamma_grid) {
      KernelDesc kernel;
      kernel.kind = cfg.kind;
      if (cfg.kind == KernelKind::rbf) kernel.gamma = gamma;

      std::vector<double> fold_acc;
      ConfusionCounts pooled;
      for (const auto& heldout : folds) {
        std::vector<std::int64_t> train_rows;
        std::vector<bool> held(static_cast<std::size_t>(n), false);
        for (std::int64_t i : heldout) held[static_cast<std::size_t>(i)] = true;
        for (std::int64_t i = 0; i < n; ++i)
          if (!held[static_cast<std::size_t>(i)]) train_rows.push_back(i);

        Tensor x_train = detail::take_rows(x, train_rows);
        Tensor x_test = detail::take_rows(x, heldout);
        std::vector<int> y_train, y_test;
        for (std::int64_t i : train_rows) y_train.push_back(y[static_cast<std::size_t>(i)]);
        for (std::int64_t i : heldout) y_test.push_back(y[static_cast<std::size_t>(i)]);

        const ScaleRanges ranges = scale_fit(x_train);
        SvmModel m = svm_train(scale_apply(x_train, ranges), y_train, c_value, kernel);
        const std::vector<int> pred = svm_predict(m, scale_apply(x_test, ranges));
        ConfusionCounts cm;
        for (std::size_t i = 0; i < pred.size(); ++i) cm.add(y_test[i], pred[i]);
        fold_acc.push_back(cm.accuracy());
        pooled.tp += cm.tp;
        pooled.fn += cm.fn;
        pooled.tn += cm.tn;
        pooled.fp += cm.fp;
      }

      double mean = 0.0;
      for (double a : fold_acc) mean += a;
      mean /= static_cast<double>(fold_acc.size());
      double var = 0.0;
      for (double a : fold_acc) var += (a - mean) * (a - mean);
      var /= static_cast<double>(fold_acc.size());

      CvCell cell;
      cell.C = c_value;
      cell.gamma = cfg.kind == KernelKind::rbf ? gamma : 0.0;
      cell.mean_accuracy = mean;
      cell.std_accuracy = std::sqrt(var);
      result.cells.push_back(cell);

      // strict > keeps the first (smallest C, then gamma) among ties
      if (!have_best || mean > result.mean_accuracy) {
        have_best = true;
        result.best_C = cell.C;
        result.best_gamma = cell.gamma;
        result.mean_accuracy = mean;
        result.std_accuracy = cell.std_accuracy;
        best_fold_acc = fold_acc;
        best_pooled = pooled;
      }
    }
  }

  result.fold_accuracy = best_fold_acc;
  result.pooled = best_pooled;

  KernelDesc kernel;
  kernel.kind = cfg.kind;
  if (cfg.kind == KernelKind::rbf) kernel.gamma = result.best_gamma;
  const ScaleRanges full = scale_fit(x);
  result.model = svm_train(scale_apply(x, full), y, result.best_C, kernel);
  result.model.ranges = full;
  return result;
}

// -------------------------------------------------------------------------
// serialization (payload for the checkpoint container's SVM1 section)
// -------------------------------------------------------------------------

inline std::vector<std::uint8_t> svm_save_blob(const SvmModel& model) {
  detail::ByteWriter w;
  w.u32le(model.kernel.kind == KernelKind::linear ? 0u : 1u);
  w.f64le(model.kernel.gamma);
  w.f64le(model.C);
  w.f64le(model.b);
  const std::int64_t m = model.support_x.dim(0), d = model.support_x.dim(1);
  w.u64le(static_cast<std::uint64_t>(m));
  w.u64le(static_cast<std::uint64_t>(d));
  for (std::int64_t i = 0; i < m; ++i) w.f64le(model.coef[static_cast<std::size_t>(i)]);
  for (std::int64_t i = 0; i < m * d; ++i) w.f64le(model.support_x[i]);
  w.u64le(static_cast<std::uint64_t>(model.ranges.lo.size()));
  for (double v : model.ranges.lo) w.f64le(v);
  for (double v : model.ranges.hi) w.f64le(v);
  return w.out();
}

inline SvmModel svm_load_blob(const std::vector<std::uint8_t>& blob) {
  detail::ByteReader r(blob, "svm blob");
  SvmModel model;
  const std::uint32_t kind = r.u32le("kernel kind");
  if (kind > 1) throw DataError("svm blob: unknown kernel kind " + std::to_string(kind));
  model.kernel.kind = kind == 0 ? KernelKind::linear : KernelKind::rbf;
  model.kernel.gamma = r.f64le("gamma");
  model.C = r.f64le("C");
  model.b = r.f64le("b");
  const std::uint64_t m = r.u64le("support count");
  const std::uint64_t d = r.u64le("feature dim");
  if (m == 0 || d == 0 || m > (1ull << 32) || d > (1ull << 32))
    throw DataError("svm blob: implausible dimensions " + std::to_string(m) + " x " +
                    std::to_string(d));
  r.need(static_cast<std::size_t>(m) * 8, "dual coefficients");
  model.coef.resize(static_cast<std::size_t>(m));
  for (auto& v : model.coef) v = r.f64le("coef");
  r.need(static_cast<std::size_t>(m * d) * 8, "support vectors");
  model.support_x = Tensor({static_cast<std::int64_t>(m), static_cast<std::int64_t>(d)});
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m * d); ++i)
    model.support_x[i] = r.f64le("support value");
  const std::uint64_t nr = r.u64le("range count");
  if (nr != 0 && nr != d)
    throw DataError("svm blob: range count " + std::to_string(nr) +
                    " does not match feature dim " + std::to_string(d));
  r.need(static_cast<std::size_t>(nr) * 16, "scaling ranges");
  model.ranges.lo.resize(static_cast<std::size_t>(nr));
  model.ranges.hi.resize(static_cast<std::size_t>(nr));
  for (auto& v : model.ranges.lo) v = r.f64le("range lo");
  for (auto& v : model.ranges.hi) v = r.f64le("range hi");
  if (r.remaining() != 0)
    throw DataError("svm blob: " + std::to_string(r.remaining()) + " unexpected trailing bytes");
  return model;
}

}  // namespace convkit

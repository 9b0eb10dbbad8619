#pragma once

// SGD training loop, metrics, and the single/ten-crop evaluator.
//
// Training is a pure function of (spec, dataset, config, seed): batch
// shuffles, dropout masks, and per-sample augmentation streams are all forked
// deterministically from the caller's rng, and gradients are reduced in
// sample order, so a rerun replays bit-exactly.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "convkit/archspec.hpp"
#include "convkit/augment.hpp"
#include "convkit/dataio.hpp"
#include "convkit/error.hpp"
#include "convkit/exec.hpp"
#include "convkit/params.hpp"
#include "convkit/rng.hpp"
#include "convkit/tensor.hpp"

namespace convkit {

namespace detail {

// a pattern is an exact parameter name or a prefix followed by '*'
inline bool name_matches(const std::string& pattern, const std::string& name) {
  if (pattern == name) return true;
  return !pattern.empty() && pattern.back() == '*' &&
         name.compare(0, pattern.size() - 1, pattern, 0, pattern.size() - 1) == 0;
}

}  // namespace detail

// -------------------------------------------------------------------------
// configuration
// -------------------------------------------------------------------------

struct SgdConfig {
  std::int64_t batch_size = 64;
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::int64_t epochs = 10;
  std::int64_t topk = 5;
  // name-pattern -> lr factor; a pattern is an exact name or a prefix
  // followed by '*' (e.g. "head.*"); the first match wins, default 1.
  std::vector<std::pair<std::string, double>> lr_multipliers;

  // lr = 0 is allowed as an explicit no-op run (bit-exact identity on the
  // parameters); only negative values are rejected.
  void validate() const {
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw ConfigError("SgdConfig: momentum must be in [0,1), got " + std::to_string(momentum));
    if (lr < 0.0) throw ConfigError("SgdConfig: lr must be >= 0, got " + std::to_string(lr));
    if (weight_decay < 0.0)
      throw ConfigError("SgdConfig: weight_decay must be >= 0, got " +
                        std::to_string(weight_decay));
    if (batch_size < 1) throw ConfigError("SgdConfig: batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("SgdConfig: epochs must be >= 0");
    if (topk < 1) throw ConfigError("SgdConfig: topk must be >= 1");
  }

  double lr_multiplier(const std::string& name) const {
    for (const auto& [pattern, factor] : lr_multipliers)
      if (detail::name_matches(pattern, name)) return factor;
    return 1.0;
  }
};

// v <- momentum*v + g + wd*w;  w <- w - lr*multiplier*v   (coupled L2 decay,
// applied to every parameter tensor named in grads)
inline void sgd_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                     const SgdConfig& cfg) {
  cfg.validate();
  for (const auto& [name, g] : grads) {
    Tensor& w = params.at(name);
    if (!g.same_shape(w))
      throw ShapeError("sgd_step: gradient for '" + name + "' is " + shape_str(g.shape()) +
                       ", parameter is " + shape_str(w.shape()));
    auto it = params.velocity.find(name);
    if (it == params.velocity.end())
      it = params.velocity.emplace(name, Tensor::zeros(w.shape())).first;
    Tensor& v = it->second;
    const double step = cfg.lr * cfg.lr_multiplier(name);
    for (std::int64_t i = 0; i < w.size(); ++i) {
      v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * w[i];
      w[i] -= step * v[i];
    }
  }
}

// -------------------------------------------------------------------------
// metrics
// -------------------------------------------------------------------------

struct EpochRow {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double top1 = 0.0;  // error rates in [0,1]
  double topk = 0.0;
};

struct Metrics {
  std::vector<EpochRow> rows;

  std::string csv() const {
    std::string out = "epoch,train_loss,test_loss,top1,topk\n";
    char buf[200];
    for (const EpochRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g\n",
                    static_cast<long long>(r.epoch), r.train_loss, r.test_loss, r.top1, r.topk);
      out += buf;
    }
    return out;
  }

  std::string log_lines() const {
    std::string out;
    char buf[200];
    for (const EpochRow& r : rows) {
      std::snprintf(buf, sizeof(buf),
                    "epoch %lld: train_loss %.4f  test_loss %.4f  top1 %.2f%%  topk %.2f%%\n",
                    static_cast<long long>(r.epoch), r.train_loss, r.test_loss, 100.0 * r.top1,
                    100.0 * r.topk);
      out += buf;
    }
    return out;
  }
};

// rank of the true label under (probability desc, class index asc): 0 means
// the label is the argmax winner with ties broken toward the lowest index.
inline std::int64_t prediction_rank(const Tensor& probs, std::int64_t row, std::int64_t label) {
  const std::int64_t k = probs.dim(1);
  const double pl = probs(row, label);
  std::int64_t rank = 0;
  for (std::int64_t c = 0; c < k; ++c) {
    if (c == label) continue;
    if (probs(row, c) > pl || (probs(row, c) == pl && c < label)) ++rank;
  }
  return rank;
}

// -------------------------------------------------------------------------
// evaluation
// -------------------------------------------------------------------------

enum class EvalMode { single, ten_crop };

struct EvalResult {
  double loss = 0.0;
  double top1 = 0.0;
  double topk = 0.0;
};

namespace detail {

inline Tensor stack_images(const std::vector<Tensor>& imgs) {
  Shape s = imgs.at(0).shape();
  s.insert(s.begin(), static_cast<std::int64_t>(imgs.size()));
  Tensor batch(s);
  for (std::size_t i = 0; i < imgs.size(); ++i)
    put_sample(batch, static_cast<std::int64_t>(i), imgs[i]);
  return batch;
}

}  // namespace detail

// Ten-crop mode averages the 10 softmax outputs (mean of softmaxes, not
// softmax of means) before argmax/top-k; loss is cross-entropy of the
// averaged probabilities. Source images must be at least the spec's input
// size; single mode requires an exact size match.
inline EvalResult evaluate(const ArchSpec& spec, const ParamStore& params, const Dataset& ds,
                           EvalMode mode = EvalMode::single, std::int64_t k = 5,
                           std::int64_t batch_size = 64) {
  const LayerNode* out_node = spec.find(spec.output);
  if (out_node == nullptr || out_node->kind != NodeKind::softmax)
    throw ValueError("evaluate: spec output must be a softmax node");
  const std::int64_t n = ds.images.dim(0);
  if (n == 0) throw ValueError("evaluate: empty dataset");
  if (static_cast<std::int64_t>(ds.labels.size()) != n)
    throw ValueError("evaluate: dataset has " + std::to_string(n) + " images but " +
                     std::to_string(ds.labels.size()) + " labels");

  double loss_sum = 0.0;
  std::int64_t top1_wrong = 0, topk_wrong = 0;

  if (mode == EvalMode::single) {
    for (std::int64_t start = 0; start < n; start += batch_size) {
      const std::int64_t m = std::min(batch_size, n - start);
      std::vector<Tensor> imgs;
      imgs.reserve(static_cast<std::size_t>(m));
      for (std::int64_t i = 0; i < m; ++i) {
        Tensor img = get_sample(ds.images, start + i);
        // center-crop when the stored image is larger than the spec input
        if (img.dim(1) != spec.in_h || img.dim(2) != spec.in_w)
          img = crop(img, (img.dim(1) - spec.in_h) / 2, (img.dim(2) - spec.in_w) / 2, spec.in_h,
                     spec.in_w);
        imgs.push_back(std::move(img));
      }
      ExecResult r = run_graph(spec, params, detail::stack_images(imgs));
      const Tensor& probs = r.tape.value(r.output);
      for (std::int64_t i = 0; i < m; ++i) {
        const std::int64_t label = ds.labels[static_cast<std::size_t>(start + i)];
        loss_sum += -std::log(probs(i, label));
        const std::int64_t rank = prediction_rank(probs, i, label);
        if (rank >= 1) ++top1_wrong;
        if (rank >= k) ++topk_wrong;
      }
    }
  } else {
    if (spec.in_h != spec.in_w)
      throw ValueError("evaluate: ten-crop needs a square input spec");
    for (std::int64_t i = 0; i < n; ++i) {
      auto crops = ten_crop(get_sample(ds.images, i), spec.in_h);
      ExecResult r = run_graph(spec, params, detail::stack_images(crops));
      const Tensor& probs = r.tape.value(r.output);  // (10, K)
      const std::int64_t kk = probs.dim(1);
      Tensor avg({1, kk});
      for (std::int64_t c = 0; c < kk; ++c) {
        double s = 0.0;
        for (std::int64_t j = 0; j < 10; ++j) s += probs(j, c);
        avg(0, c) = s / 10.0;
      }
      const std::int64_t label = ds.labels[static_cast<std::size_t>(i)];
      loss_sum += -std::log(avg(0, label));
      const std::int64_t rank = prediction_rank(avg, 0, label);
      if (rank >= 1) ++top1_wrong;
      if (rank >= k) ++topk_wrong;
    }
  }

  EvalResult res;
  res.loss = loss_sum / static_cast<double>(n);
  res.top1 = static_cast<double>(top1_wrong) / static_cast<double>(n);
  res.topk = static_cast<double>(topk_wrong) / static_cast<double>(n);
  return res;
}

// -------------------------------------------------------------------------
// the training loop
// -------------------------------------------------------------------------

// Per-sample augmentation: image in, augmented image out. The rng handed in
// is forked from (epoch, sample index), so augmentation is independent of
// batch order and thread schedule.
using AugmentFn = std::function<Tensor(const Tensor&, Rng&)>;

struct TrainResult {
  ParamStore params;
  Metrics metrics;
};

// Epoch loop with seeded reshuffling. Per-epoch rows record the mean training
// loss and an evaluation on test_ds (or on the training set itself when no
// test set is given). Aborts with DivergenceError the moment a batch loss
// goes non-finite.
inline TrainResult train(const ArchSpec& spec, const Dataset& train_ds, const SgdConfig& cfg,
                         const Rng& rng, const Dataset* test_ds = nullptr,
                         const AugmentFn& augment = nullptr,
                         const ParamStore* warm_start = nullptr,
                         EvalMode eval_mode = EvalMode::single) {
  cfg.validate();
  const std::int64_t n = train_ds.images.dim(0);
  if (n == 0) throw ValueError("train: empty dataset");
  if (cfg.batch_size > n)
    throw ValueError("train: batch size " + std::to_string(cfg.batch_size) +
                     " exceeds dataset size " + std::to_string(n));
  if (static_cast<std::int64_t>(train_ds.labels.size()) != n)
    throw ValueError("train: dataset has " + std::to_string(n) + " images but " +
                     std::to_string(train_ds.labels.size()) + " labels");

  TrainResult result;
  result.params = warm_start != nullptr ? *warm_start : init_params(spec, InitPolicy{}, rng);

  const auto inventory = param_inventory(spec);
  const Rng aug_base = rng.fork(0xA06F00ull);
  const Rng shuffle_base = rng.fork(0x5C0FFull);
  const Rng dropout_base = rng.fork(0xD201ull);

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // seeded Fisher-Yates reshuffle per epoch
    Rng srng = shuffle_base.fork(static_cast<std::uint64_t>(epoch));
    for (std::int64_t i = n - 1; i > 0; --i) {
      const std::int64_t j =
          static_cast<std::int64_t>(srng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    double loss_sum = 0.0;
    std::int64_t batch_index = 0;
    for (std::int64_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const std::int64_t m = std::min(cfg.batch_size, n - start);
      std::vector<Tensor> imgs;
      std::vector<std::int64_t> labels;
      imgs.reserve(static_cast<std::size_t>(m));
      labels.reserve(static_cast<std::size_t>(m));
      for (std::int64_t i = 0; i < m; ++i) {
        const std::int64_t idx = order[static_cast<std::size_t>(start + i)];
        Tensor img = get_sample(train_ds.images, idx);
        if (augment) {
          Rng arng = aug_base.fork(sample_stream(static_cast<std::uint64_t>(epoch),
                                                 static_cast<std::uint64_t>(idx)));
          img = augment(img, arng);
          if (img.dim(0) != spec.in_c || img.dim(1) != spec.in_h || img.dim(2) != spec.in_w)
            throw ShapeError("train: augmentation produced " + shape_str(img.shape()) +
                             " for spec input " + shape_str({spec.in_c, spec.in_h, spec.in_w}));
        }
        imgs.push_back(std::move(img));
        labels.push_back(train_ds.labels[static_cast<std::size_t>(idx)]);
      }

      Rng drng = dropout_base.fork(static_cast<std::uint64_t>(epoch) * 1000003ull +
                                   static_cast<std::uint64_t>(batch_index));
      ExecOptions opts;
      opts.training = true;
      opts.rng = &drng;
      opts.labels = &labels;
      ExecResult r = run_graph(spec, result.params, detail::stack_images(imgs), opts);
      const double loss = r.loss_value();
      if (!std::isfinite(loss))
        throw DivergenceError("train: non-finite loss " + std::to_string(loss) + " at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(batch_index) +
                              " — aborting");
      loss_sum += loss * static_cast<double>(m);
      r.tape.backward(r.loss);

      std::map<std::string, Tensor> grads;
      for (const auto& [name, shape] : inventory)
        grads.emplace(name, r.tape.grad(r.param_of.at(name)));
      sgd_step(result.params, grads, cfg);
    }

    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(n);
    const Dataset& eval_ds = test_ds != nullptr ? *test_ds : train_ds;
    EvalResult ev = evaluate(spec, result.params, eval_ds, eval_mode, cfg.topk);
    row.test_loss = ev.loss;
    row.top1 = ev.top1;
    row.topk = ev.topk;
    result.metrics.rows.push_back(row);
  }
  return result;
}

}  // namespace convkit

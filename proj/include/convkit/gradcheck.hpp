#pragma once

// Finite-difference gradient check over a whole model: the project's primary
// verification oracle. Central differences with eps = 1e-6; relative error
// |a - n| / max(|a|, |n|, 1e-8); a parameter tensor passes iff its worst
// coordinate stays below 1e-4.
//
// Stochastic and non-smooth pieces are handled explicitly:
//   - dropout masks are sampled once and frozen across every evaluation;
//   - coordinates whose +/-eps forward passes come within 1e-5 of a ReLU or
//     max-pool decision boundary are masked out of the comparison (the kink
//     meter in layers.hpp tracks the running margin per forward pass).
//
// Loss convention: a softmax output is checked through the fused softmax
// cross-entropy used in training (labels synthesized as i mod K when the
// caller gives none); any other output is scalarized as the mean of its
// squared entries, i.e. an MSE against a zero target.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "convkit/archspec.hpp"
#include "convkit/error.hpp"
#include "convkit/exec.hpp"
#include "convkit/layers.hpp"
#include "convkit/params.hpp"
#include "convkit/rng.hpp"
#include "convkit/tensor.hpp"

namespace convkit {

constexpr std::int64_t kGradcheckBudget = 20000;

struct GradcheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::int64_t compared = 0;
  std::int64_t masked = 0;
  bool pass = true;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool pass = true;

  // `PARAM <name> <max_rel_err> <PASS|FAIL>` per tensor
  std::vector<std::string> machine_lines() const {
    std::vector<std::string> lines;
    char buf[160];
    for (const auto& e : entries) {
      std::snprintf(buf, sizeof(buf), "PARAM %s %.3e %s", e.name.c_str(), e.max_rel_err,
                    e.pass ? "PASS" : "FAIL");
      lines.emplace_back(buf);
    }
    return lines;
  }

  std::string table() const {
    std::string out = "parameter                max_rel_err   compared   masked   status\n";
    char buf[200];
    for (const auto& e : entries) {
      std::snprintf(buf, sizeof(buf), "%-24s %11.3e KCOMPARED KMASKED   %s\n", e.name.c_str(),
                    e.max_rel_err, e.pass ? "PASS" : "FAIL");
      std::string line = buf;
      char num[32];
      std::snprintf(num, sizeof(num), "%8" PRId64, e.compared);
      line.replace(line.find("KCOMPARED"), 9, num);
      std::snprintf(num, sizeof(num), "%6" PRId64, e.masked);
      line.replace(line.find("KMASKED"), 7, num);
      out += line;
    }
    out += pass ? "OVERALL PASS\n" : "OVERALL FAIL\n";
    return out;
  }
};

inline GradcheckReport gradcheck(const ArchSpec& spec, const ParamStore& params,
                                 const Tensor& batch,
                                 const std::vector<std::int64_t>* labels_opt = nullptr,
                                 double eps = 1e-6, double tol = 1e-4,
                                 std::int64_t budget = kGradcheckBudget) {
  auto inventory = param_inventory(spec);
  std::int64_t total = 0;
  for (const auto& [name, shape] : inventory) total += shape_numel(shape);
  if (total > budget)
    throw BudgetError("gradcheck: model has " + std::to_string(total) +
                      " parameters, budget is " + std::to_string(budget));

  const LayerNode* out_node = spec.find(spec.output);
  const bool softmax_out = out_node != nullptr && out_node->kind == NodeKind::softmax;
  const std::int64_t n = batch.dim(0);

  std::vector<std::int64_t> labels;
  if (softmax_out) {
    if (labels_opt != nullptr) {
      labels = *labels_opt;
    } else {
      auto shapes = infer_shapes(spec);
      const std::int64_t k = shapes.at(spec.output)[0];
      for (std::int64_t i = 0; i < n; ++i) labels.push_back(i % k);
    }
  }

  // freeze one mask per dropout node for the whole check
  std::map<std::string, Tensor> masks;
  {
    auto shapes = infer_shapes(spec);
    shapes[kInputId] = Shape{spec.in_c, spec.in_h, spec.in_w};
    Rng mask_rng(0x6d61736bull, 17);
    for (const LayerNode& node : spec.nodes) {
      if (node.kind != NodeKind::dropout) continue;
      Shape s = shapes.at(node.from[0]);
      s.insert(s.begin(), n);
      masks.emplace(node.id, dropout_mask(s, node.p, mask_rng));
    }
  }

  ExecOptions opts;
  opts.frozen_masks = &masks;
  if (softmax_out) opts.labels = &labels;

  // scalar loss of a forward pass, shared by the analytic and FD evaluations
  auto run_loss = [&](const ParamStore& ps) -> ExecResult {
    ExecResult r = run_graph(spec, ps, batch, opts);
    if (softmax_out) return r;
    int sq = t_mul(r.tape, r.output, r.output);
    r.loss = t_mean(r.tape, sq);
    return r;
  };

  // analytic gradients
  ExecResult base = run_loss(params);
  base.tape.backward(base.loss);

  GradcheckReport report;
  ParamStore work = params;
  for (const auto& [name, shape] : inventory) {
    GradcheckEntry entry;
    entry.name = name;
    Tensor analytic = base.tape.grad(base.param_of.at(name));
    Tensor& wt = work.at(name);
    for (std::int64_t i = 0; i < wt.size(); ++i) {
      const double keep = wt[i];
      kink_reset();
      wt[i] = keep + eps;
      const double lp = run_loss(work).loss_value();
      const double margin_p = kink_margin();
      kink_reset();
      wt[i] = keep - eps;
      const double lm = run_loss(work).loss_value();
      const double margin_m = kink_margin();
      wt[i] = keep;
      if (margin_p < 1e-5 || margin_m < 1e-5) {
        ++entry.masked;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = analytic[i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      if (rel > entry.max_rel_err) entry.max_rel_err = rel;
      ++entry.compared;
    }
    entry.pass = entry.max_rel_err < tol;
    if (!entry.pass) report.pass = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace convkit

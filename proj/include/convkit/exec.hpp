#pragma once

// Batched execution of an ArchSpec on an autodiff tape.
//
// run_graph walks the spec's nodes in declaration order (forward references
// are banned at parse time, so this is a valid topological order), registers
// each learnable tensor as a gradient-requiring leaf, and records the layer
// ops. Because the tape is dynamic, truncated execution for feature
// extraction is just "stop after node X" — the classifier head is never
// touched.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "convkit/archspec.hpp"
#include "convkit/autodiff.hpp"
#include "convkit/error.hpp"
#include "convkit/layers.hpp"
#include "convkit/params.hpp"
#include "convkit/rng.hpp"
#include "convkit/tensor.hpp"

namespace convkit {

struct ExecOptions {
  // Dropout behaviour: frozen_masks pins named dropout nodes to fixed masks
  // (gradient checks, reproducibility); otherwise training=true samples fresh
  // masks from rng and training=false applies the deterministic test-time
  // scaling by p.
  bool training = false;
  Rng* rng = nullptr;
  const std::map<std::string, Tensor>* frozen_masks = nullptr;
  // When labels are given the spec's output must be a softmax node; the loss
  // is then recorded as the fused softmax cross-entropy of the logits.
  const std::vector<std::int64_t>* labels = nullptr;
  // Stop after computing this node (feature extraction). Empty = full run.
  std::string truncate_at{};
};

struct ExecResult {
  Tape tape;
  std::map<std::string, int> node_of;   // spec node id -> tape id
  std::map<std::string, int> param_of;  // parameter name -> tape leaf id
  std::map<std::string, Tensor> masks;  // dropout masks used in this run
  int output = -1;                      // tape id of the (possibly truncated) output
  int loss = -1;                        // tape id of scalar loss, -1 if no labels

  const Tensor& value(const std::string& node_id) const {
    return tape.value(node_of.at(node_id));
  }

  double loss_value() const {
    if (loss < 0) throw ValueError("no loss recorded on this run");
    return tape.value(loss)[0];
  }
};

inline ExecResult run_graph(const ArchSpec& spec, const ParamStore& params,
                            const Tensor& batch, const ExecOptions& opts = {}) {
  if (batch.rank() != 4)
    throw ShapeError("run_graph: batch must be rank-4 (N,C,H,W), got " + shape_str(batch.shape()));
  if (batch.dim(1) != spec.in_c || batch.dim(2) != spec.in_h || batch.dim(3) != spec.in_w)
    throw ShapeError("run_graph: batch " + shape_str(batch.shape()) + " does not match input " +
                     shape_str({spec.in_c, spec.in_h, spec.in_w}));
  const std::int64_t n = batch.dim(0);
  if (opts.labels != nullptr) {
    if (static_cast<std::int64_t>(opts.labels->size()) != n)
      throw ValueError("run_graph: " + std::to_string(opts.labels->size()) + " labels for batch of " +
                       std::to_string(n));
    const LayerNode* out_node = spec.find(spec.output);
    if (out_node == nullptr || out_node->kind != NodeKind::softmax)
      throw ValueError("run_graph: labels require a softmax output node");
  }

  ExecResult r;
  r.node_of[kInputId] = r.tape.leaf(batch, /*requires_grad=*/false);
  if (opts.truncate_at == kInputId) {
    r.output = r.node_of[kInputId];
    return r;
  }

  auto param_leaf = [&](const std::string& name) {
    int id = r.tape.leaf(params.at(name), /*requires_grad=*/true);
    r.param_of[name] = id;
    return id;
  };

  bool truncated = false;
  for (const LayerNode& node : spec.nodes) {
    const int in0 = r.node_of.at(node.from[0]);
    int out_id = -1;
    switch (node.kind) {
      case NodeKind::conv: {
        int w = param_leaf(node.id + ".w");
        int b = param_leaf(node.id + ".b");
        out_id = t_conv2d(r.tape, in0, w, b, node.stride, node.pad);
        break;
      }
      case NodeKind::act:
        out_id = t_activation(r.tape, in0, node.act);
        break;
      case NodeKind::pool:
        out_id = t_pool2d(r.tape, in0, node.pool, node.k, node.stride, node.pad);
        break;
      case NodeKind::gap:
        out_id = t_gap(r.tape, in0);
        break;
      case NodeKind::dense: {
        int flat = t_flatten(r.tape, in0);
        int w = param_leaf(node.id + ".w");
        int b = param_leaf(node.id + ".b");
        out_id = t_dense(r.tape, flat, w, b);
        break;
      }
      case NodeKind::dropout: {
        if (opts.frozen_masks != nullptr && opts.frozen_masks->count(node.id)) {
          const Tensor& mask = opts.frozen_masks->at(node.id);
          if (mask.shape() != r.tape.value(in0).shape())
            throw ShapeError("run_graph: frozen mask for '" + node.id + "' is " +
                             shape_str(mask.shape()) + ", input is " +
                             shape_str(r.tape.value(in0).shape()));
          out_id = t_dropout_masked(r.tape, in0, mask);
          r.masks.emplace(node.id, mask);
        } else if (opts.training) {
          if (opts.rng == nullptr)
            throw ValueError("run_graph: training-mode dropout needs an rng");
          Tensor mask = dropout_mask(r.tape.value(in0).shape(), node.p, *opts.rng);
          out_id = t_dropout_masked(r.tape, in0, mask);
          r.masks.emplace(node.id, std::move(mask));
        } else {
          // test time: outputs multiplied by p, no sampling
          out_id = t_scale(r.tape, in0, node.p);
        }
        break;
      }
      case NodeKind::concat: {
        std::vector<int> ids;
        for (const std::string& f : node.from) ids.push_back(r.node_of.at(f));
        out_id = t_concat(r.tape, ids);
        break;
      }
      case NodeKind::add:
        out_id = t_add(r.tape, in0, r.node_of.at(node.from[1]));
        break;
      case NodeKind::softmax: {
        if (opts.labels != nullptr && node.id == spec.output)
          r.loss = t_softmax_ce(r.tape, in0, *opts.labels);
        out_id = t_softmax(r.tape, in0);
        break;
      }
    }
    r.node_of[node.id] = out_id;
    if (node.id == opts.truncate_at) {
      r.output = out_id;
      truncated = true;
      break;
    }
  }
  if (!opts.truncate_at.empty() && !truncated)
    throw ValueError("run_graph: truncation node '" + opts.truncate_at + "' not in spec");
  if (!truncated) r.output = r.node_of.at(spec.output);
  return r;
}

}  // namespace convkit

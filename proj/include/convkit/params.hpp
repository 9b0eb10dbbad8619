#pragma once

// Named parameter storage for a network instantiated from an ArchSpec.
//
// Every conv node owns "<id>.w" (out, in, kh, kw) and "<id>.b" (out); every
// dense node owns "<id>.w" (in, out) and "<id>.b" (out). No other node kind
// has learnable parameters, so the inventory here is exactly what analyze()
// counts — a cross-module identity the tests pin down.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "convkit/archspec.hpp"
#include "convkit/error.hpp"
#include "convkit/rng.hpp"
#include "convkit/tensor.hpp"

namespace convkit {

struct ParamStore {
  // std::map keeps iteration order deterministic (name-sorted) for
  // serialization and for reproducible SGD sweeps.
  std::map<std::string, Tensor> values;
  std::map<std::string, Tensor> velocity;  // momentum state, allocated lazily

  bool has(const std::string& name) const { return values.count(name) != 0; }

  const Tensor& at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw ValueError("missing parameter '" + name + "'");
    return it->second;
  }

  Tensor& at(const std::string& name) {
    auto it = values.find(name);
    if (it == values.end()) throw ValueError("missing parameter '" + name + "'");
    return it->second;
  }

  std::int64_t total_size() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : values) n += t.size();
    return n;
  }
};

// Learnable tensors in spec order: (name, shape) pairs.
inline std::vector<std::pair<std::string, Shape>> param_inventory(const ArchSpec& spec) {
  auto shapes = infer_shapes(spec);
  shapes[kInputId] = Shape{spec.in_c, spec.in_h, spec.in_w};
  std::vector<std::pair<std::string, Shape>> inv;
  for (const LayerNode& n : spec.nodes) {
    if (n.kind == NodeKind::conv) {
      const Shape& in = shapes.at(n.from[0]);
      inv.emplace_back(n.id + ".w", Shape{n.out, in[0], n.kh, n.kw});
      inv.emplace_back(n.id + ".b", Shape{n.out});
    } else if (n.kind == NodeKind::dense) {
      const Shape& in = shapes.at(n.from[0]);
      std::int64_t d = 1;
      for (std::int64_t v : in) d *= v;  // dense flattens its input implicitly
      inv.emplace_back(n.id + ".w", Shape{d, n.out});
      inv.emplace_back(n.id + ".b", Shape{n.out});
    }
  }
  return inv;
}

struct InitPolicy {
  enum class Kind { zero, gaussian };
  Kind kind = Kind::gaussian;
  double mean = 0.0;
  double stddev = 0.01;
};

namespace detail {
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}
}  // namespace detail

// Gaussian policy draws weights from N(mean, stddev^2) and zeroes biases.
// Each tensor uses an rng substream forked on its name, so the draw for a
// given parameter is independent of inventory order.
inline ParamStore init_params(const ArchSpec& spec, const InitPolicy& policy, const Rng& rng) {
  if (policy.kind == InitPolicy::Kind::gaussian && !(policy.stddev > 0.0))
    throw ValueError("init_params: gaussian stddev must be > 0");
  ParamStore store;
  for (const auto& [name, shape] : param_inventory(spec)) {
    if (policy.kind == InitPolicy::Kind::zero ||
        (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0)) {
      store.values.emplace(name, Tensor::zeros(shape));
      continue;
    }
    Rng sub = rng.fork(detail::fnv1a(name));
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = sub.gaussian(policy.mean, policy.stddev);
    store.values.emplace(name, std::move(t));
  }
  return store;
}

}  // namespace convkit

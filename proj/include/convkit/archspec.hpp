#pragma once

// ArchSpec: the line-based architecture description language, its parser and
// renderer, shape inference, the static analyzer (parameters, MACs, receptive
// fields, parameter-layer depth), and the composite block builders (VGG
// stacks, inception modules, residual blocks). Macro node lines expand into
// primitive nodes at parse time; render emits the expanded primitives.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "convkit/error.hpp"
#include "convkit/layers.hpp"
#include "convkit/tensor.hpp"

namespace convkit {

enum class NodeKind { conv, act, pool, gap, dense, dropout, concat, add, softmax };

inline std::string kind_to_string(NodeKind k) {
  switch (k) {
    case NodeKind::conv: return "conv";
    case NodeKind::act: return "act";
    case NodeKind::pool: return "pool";
    case NodeKind::gap: return "gap";
    case NodeKind::dense: return "dense";
    case NodeKind::dropout: return "dropout";
    case NodeKind::concat: return "concat";
    case NodeKind::add: return "add";
    case NodeKind::softmax: return "softmax";
  }
  return "?";
}

struct LayerNode {
  std::string id;
  NodeKind kind = NodeKind::conv;
  std::vector<std::string> from;
  // hyperparameters; the used subset depends on kind
  std::int64_t out = 0;                 // conv / dense output channels|units
  std::int64_t kh = 0, kw = 0;          // conv kernel
  std::int64_t k = 0;                   // pool window (square)
  std::int64_t stride = 1, pad = 0;     // conv / pool
  ActKind act = ActKind::relu;          // act nodes
  PoolKind pool = PoolKind::max;        // pool nodes
  double p = 0.5;                       // dropout probability

  bool operator==(const LayerNode& o) const {
    return id == o.id && kind == o.kind && from == o.from && out == o.out && kh == o.kh &&
           kw == o.kw && k == o.k && stride == o.stride && pad == o.pad && act == o.act &&
           pool == o.pool && p == o.p;
  }
};

struct ArchSpec {
  std::string name = "net";
  std::int64_t in_c = 0, in_h = 0, in_w = 0;
  std::vector<LayerNode> nodes;
  std::string output;

  bool operator==(const ArchSpec& o) const {
    return in_c == o.in_c && in_h == o.in_h && in_w == o.in_w && nodes == o.nodes &&
           output == o.output;
  }

  const LayerNode* find(const std::string& id) const {
    for (const auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }
};

// The reserved id every first layer hangs off.
inline const std::string kInputId = "input";

// ---------------------------------------------------------------------------
// Block builders. Each appends expanded primitive nodes to `spec`, naming
// them "<id>.<suffix>", and finishes with a node whose id is exactly `id`
// so downstream `from=` references work.
// ---------------------------------------------------------------------------

// depth 3x3 stride-1 pad-1 convolutions, ReLU after each.
inline std::string append_vgg_stack(ArchSpec& spec, const std::string& id,
                                    const std::string& from, int depth, std::int64_t out_c) {
  if (depth != 2 && depth != 3)
    throw ValueError("vgg-stack '" + id + "': depth must be 2 or 3, got " + std::to_string(depth));
  if (out_c < 1) throw ValueError("vgg-stack '" + id + "': out must be >= 1");
  std::string cur = from;
  for (int i = 1; i <= depth; ++i) {
    LayerNode c;
    c.id = id + ".c" + std::to_string(i);
    c.kind = NodeKind::conv;
    c.out = out_c;
    c.kh = c.kw = 3;
    c.stride = 1;
    c.pad = 1;
    c.from = {cur};
    spec.nodes.push_back(c);
    LayerNode a;
    a.id = (i == depth) ? id : id + ".a" + std::to_string(i);
    a.kind = NodeKind::act;
    a.act = ActKind::relu;
    a.from = {c.id};
    spec.nodes.push_back(a);
    cur = a.id;
  }
  return id;
}

struct InceptionConfig {
  std::int64_t n1 = 0;  // 1x1 branch
  std::int64_t r3 = 0;  // 1x1 reducer before the 3x3 (reduced mode)
  std::int64_t n3 = 0;  // 3x3 branch
  std::int64_t r5 = 0;  // 1x1 reducer before the 5x5 (reduced mode)
  std::int64_t n5 = 0;  // 5x5 branch
  std::int64_t pp = 0;  // 1x1 projection after pooling (reduced mode)
  bool naive = false;
};

// Four parallel branches with same-padding, concatenated on channels;
// ReLU after every convolution. Naive mode ignores r3/r5/pp and the pool
// branch passes all input channels through.
inline std::string append_inception(ArchSpec& spec, const std::string& id,
                                    const std::string& from, const InceptionConfig& cfg) {
  auto need = [&](std::int64_t v, const char* what) {
    if (v < 1)
      throw ValueError("inception '" + id + "': " + what + " must be >= 1, got " +
                       std::to_string(v));
  };
  need(cfg.n1, "n1");
  need(cfg.n3, "n3");
  need(cfg.n5, "n5");
  if (!cfg.naive) {
    need(cfg.r3, "r3");
    need(cfg.r5, "r5");
    need(cfg.pp, "pp");
  }
  auto conv = [&](const std::string& nid, const std::string& src, std::int64_t out,
                  std::int64_t k) {
    LayerNode c;
    c.id = nid;
    c.kind = NodeKind::conv;
    c.out = out;
    c.kh = c.kw = k;
    c.stride = 1;
    c.pad = (k - 1) / 2;  // same padding keeps branch spatial dims aligned
    c.from = {src};
    spec.nodes.push_back(c);
    LayerNode a;
    a.id = nid + "r";
    a.kind = NodeKind::act;
    a.act = ActKind::relu;
    a.from = {nid};
    spec.nodes.push_back(a);
    return a.id;
  };
  std::vector<std::string> branches;
  // 1x1 branch
  branches.push_back(conv(id + ".b1", from, cfg.n1, 1));
  // 3x3 branch (optionally behind a 1x1 reducer)
  std::string src3 = cfg.naive ? from : conv(id + ".r3", from, cfg.r3, 1);
  branches.push_back(conv(id + ".b3", src3, cfg.n3, 3));
  // 5x5 branch (optionally behind a 1x1 reducer)
  std::string src5 = cfg.naive ? from : conv(id + ".r5", from, cfg.r5, 1);
  branches.push_back(conv(id + ".b5", src5, cfg.n5, 5));
  // pool branch: 3x3 max pool stride 1 same padding
  LayerNode pl;
  pl.id = id + ".bp";
  pl.kind = NodeKind::pool;
  pl.pool = PoolKind::max;
  pl.k = 3;
  pl.stride = 1;
  pl.pad = 1;
  pl.from = {from};
  spec.nodes.push_back(pl);
  branches.push_back(cfg.naive ? pl.id : conv(id + ".bpp", pl.id, cfg.pp, 1));
  LayerNode cat;
  cat.id = id;
  cat.kind = NodeKind::concat;
  cat.from = branches;
  spec.nodes.push_back(cat);
  return id;
}

enum class ShortcutKind { identity, projection };

// g(M_r(f) + shortcut(f)) with the second ReLU after the addition. The inner
// stack is 2 or 3 same-padded 3x3 convolutions with ReLU between them; the
// projection shortcut is a 1x1 convolution (stride 1 — the block never
// downsamples, so the projection stride matches).
inline std::string append_residual(ArchSpec& spec, const std::string& id,
                                   const std::string& from, int layers, std::int64_t out_c,
                                   ShortcutKind shortcut) {
  if (layers != 2 && layers != 3)
    throw ValueError("residual '" + id + "': layers must be 2 or 3, got " +
                     std::to_string(layers));
  if (out_c < 1) throw ValueError("residual '" + id + "': out must be >= 1");
  std::string cur = from;
  for (int i = 1; i <= layers; ++i) {
    LayerNode c;
    c.id = id + ".c" + std::to_string(i);
    c.kind = NodeKind::conv;
    c.out = out_c;
    c.kh = c.kw = 3;
    c.stride = 1;
    c.pad = 1;
    c.from = {cur};
    spec.nodes.push_back(c);
    cur = c.id;
    if (i < layers) {  // ReLU between inner layers, none before the addition
      LayerNode a;
      a.id = id + ".a" + std::to_string(i);
      a.kind = NodeKind::act;
      a.act = ActKind::relu;
      a.from = {cur};
      spec.nodes.push_back(a);
      cur = a.id;
    }
  }
  std::string sc = from;
  if (shortcut == ShortcutKind::projection) {
    LayerNode pj;
    pj.id = id + ".proj";
    pj.kind = NodeKind::conv;
    pj.out = out_c;
    pj.kh = pj.kw = 1;
    pj.stride = 1;
    pj.pad = 0;
    pj.from = {from};
    spec.nodes.push_back(pj);
    sc = pj.id;
  }
  LayerNode ad;
  ad.id = id + ".add";
  ad.kind = NodeKind::add;
  ad.from = {cur, sc};
  spec.nodes.push_back(ad);
  LayerNode a2;
  a2.id = id;  // second nonlinearity, after the addition
  a2.kind = NodeKind::act;
  a2.act = ActKind::relu;
  a2.from = {ad.id};
  spec.nodes.push_back(a2);
  return id;
}

// ---------------------------------------------------------------------------
// Shape inference: per-node output shapes, batchless ((C,H,W) or (D,)).
// Nodes are processed in declaration order; forward references are banned by
// the parser, so this order is topological.
// ---------------------------------------------------------------------------

inline std::map<std::string, Shape> infer_shapes(const ArchSpec& spec) {
  if (spec.in_c < 1 || spec.in_h < 1 || spec.in_w < 1)
    throw ShapeError("archspec '" + spec.name + "': invalid input shape " +
                     shape_str({spec.in_c, spec.in_h, spec.in_w}));
  if (spec.nodes.empty()) throw ValueError("archspec '" + spec.name + "': no nodes");
  std::map<std::string, Shape> shapes;
  shapes[kInputId] = {spec.in_c, spec.in_h, spec.in_w};
  auto fail = [](const LayerNode& n, const std::string& msg) {
    throw ShapeError("node '" + n.id + "': " + msg);
  };
  for (const auto& n : spec.nodes) {
    std::vector<Shape> in;
    for (const auto& f : n.from) {
      auto it = shapes.find(f);
      if (it == shapes.end()) fail(n, "input '" + f + "' has no inferred shape");
      in.push_back(it->second);
    }
    Shape out;
    switch (n.kind) {
      case NodeKind::conv: {
        if (in[0].size() != 3) fail(n, "conv needs a (C,H,W) input, got " + shape_str(in[0]));
        const std::int64_t ho = conv_out_dim(in[0][1], n.kh, n.stride, n.pad);
        const std::int64_t wo = conv_out_dim(in[0][2], n.kw, n.stride, n.pad);
        if (ho < 1 || wo < 1)
          fail(n, "degenerate conv output for input " + shape_str(in[0]) + " with k=" +
                      std::to_string(n.kh) + "x" + std::to_string(n.kw));
        out = {n.out, ho, wo};
        break;
      }
      case NodeKind::pool: {
        if (in[0].size() != 3) fail(n, "pool needs a (C,H,W) input, got " + shape_str(in[0]));
        const std::int64_t ho = conv_out_dim(in[0][1], n.k, n.stride, n.pad);
        const std::int64_t wo = conv_out_dim(in[0][2], n.k, n.stride, n.pad);
        if (ho < 1 || wo < 1) fail(n, "degenerate pool output for input " + shape_str(in[0]));
        out = {in[0][0], ho, wo};
        break;
      }
      case NodeKind::act:
      case NodeKind::dropout:
        out = in[0];
        break;
      case NodeKind::gap:
        if (in[0].size() != 3) fail(n, "gap needs a (C,H,W) input, got " + shape_str(in[0]));
        out = {in[0][0]};
        break;
      case NodeKind::dense:
        out = {n.out};  // rank-3 inputs are flattened implicitly
        break;
      case NodeKind::concat: {
        std::int64_t c = 0;
        for (const auto& s : in) {
          if (s.size() != 3)
            fail(n, "concat inputs must be (C,H,W), got " + shape_str(s));
          if (s[1] != in[0][1] || s[2] != in[0][2])
            fail(n, "concat spatial mismatch: " + shape_str(in[0]) + " vs " + shape_str(s));
          c += s[0];
        }
        out = {c, in[0][1], in[0][2]};
        break;
      }
      case NodeKind::add:
        if (in[0] != in[1])
          fail(n, "add needs identical shapes, got " + shape_str(in[0]) + " vs " +
                      shape_str(in[1]));
        out = in[0];
        break;
      case NodeKind::softmax:
        if (in[0].size() != 1) fail(n, "softmax needs a flat (K,) input, got " + shape_str(in[0]));
        out = in[0];
        break;
    }
    shapes[n.id] = out;
  }
  return shapes;
}

// ---------------------------------------------------------------------------
// Static analyzer
// ---------------------------------------------------------------------------

struct NodeReport {
  std::string id;
  std::string kind;
  Shape out_shape;
  std::int64_t params = 0;  // weights + biases
  std::int64_t macs = 0;    // multiply-accumulates; biases/activations excluded
  std::int64_t rf = 1;      // effective receptive field (square side)
  std::int64_t jump = 1;    // input-pixel stride between adjacent outputs
  int depth = 0;            // parameter layers on the longest path up to here
};

struct AnalyzeReport {
  std::vector<NodeReport> nodes;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
  int param_depth = 0;           // parameter layers (conv+dense) on the longest path
  bool multibranch_rf = false;   // rf of some merge taken as max across branches
};

inline AnalyzeReport analyze(const ArchSpec& spec) {
  auto shapes = infer_shapes(spec);
  AnalyzeReport rep;
  std::map<std::string, NodeReport> by_id;
  NodeReport in;
  in.id = kInputId;
  in.kind = "input";
  in.out_shape = shapes[kInputId];
  by_id[kInputId] = in;

  for (const auto& n : spec.nodes) {
    NodeReport r;
    r.id = n.id;
    r.kind = kind_to_string(n.kind);
    r.out_shape = shapes[n.id];
    // receptive field / jump / depth over the (possibly multi-) inputs
    std::int64_t rf = 0, jump = 0;
    int depth = 0;
    bool differ = false;
    for (const auto& f : n.from) {
      const auto& p = by_id.at(f);
      if (rf != 0 && (p.rf != rf || p.jump != jump)) differ = true;
      rf = std::max(rf, p.rf);
      jump = std::max(jump, p.jump);
      depth = std::max(depth, p.depth);
    }
    if (n.from.size() > 1 && differ) rep.multibranch_rf = true;
    const Shape& inshape = shapes.at(n.from[0]);
    switch (n.kind) {
      case NodeKind::conv: {
        const std::int64_t cin = inshape[0];
        r.params = n.out * cin * n.kh * n.kw + n.out;
        r.macs = r.out_shape[0] * r.out_shape[1] * r.out_shape[2] * cin * n.kh * n.kw;
        r.rf = rf + (n.kh - 1) * jump;  // square kernels in rf accounting
        r.jump = jump * n.stride;
        r.depth = depth + 1;
        break;
      }
      case NodeKind::pool:
        r.rf = rf + (n.k - 1) * jump;
        r.jump = jump * n.stride;
        r.depth = depth;
        break;
      case NodeKind::dense: {
        std::int64_t d = 1;
        for (auto v : inshape) d *= v;
        r.params = d * n.out + n.out;
        r.macs = d * n.out;
        r.rf = rf;
        r.jump = jump;
        r.depth = depth + 1;
        break;
      }
      default:
        r.rf = rf;
        r.jump = jump;
        r.depth = depth;
        break;
    }
    rep.total_params += r.params;
    rep.total_macs += r.macs;
    by_id[n.id] = r;
    rep.nodes.push_back(r);
  }
  rep.param_depth = by_id.at(spec.output).depth;
  return rep;
}

// ---------------------------------------------------------------------------
// Parser / renderer
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::int64_t parse_i64(const std::string& s, int line, const std::string& what) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError(line, "bad integer for " + what + ": '" + s + "'");
  }
}

inline double parse_f64(const std::string& s, int line, const std::string& what) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError(line, "bad number for " + what + ": '" + s + "'");
  }
}

// Dots appear only in macro-expanded internal ids, but rendered specs list
// those nodes explicitly, so they must re-parse.
inline bool valid_id(const std::string& s) {
  if (s.empty()) return false;
  for (char ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '.') return false;
  return true;
}

// "k1=v1 k2=v2 ..." tokens into a map; duplicate or malformed keys rejected.
inline std::map<std::string, std::string> parse_kv(const std::vector<std::string>& toks,
                                                   std::size_t start, int line) {
  std::map<std::string, std::string> kv;
  for (std::size_t i = start; i < toks.size(); ++i) {
    auto eq = toks[i].find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 >= toks[i].size())
      throw ParseError(line, "expected key=value, got '" + toks[i] + "'");
    std::string k = toks[i].substr(0, eq), v = toks[i].substr(eq + 1);
    if (kv.count(k)) throw ParseError(line, "duplicate key '" + k + "'");
    kv[k] = v;
  }
  return kv;
}

inline std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline ArchSpec parse_archspec(const std::string& text, const std::string& name = "net") {
  ArchSpec spec;
  spec.name = name;
  bool have_input = false, have_output = false;
  std::set<std::string> declared;  // node ids (and "input") defined so far

  // keys every node kind accepts, used for unknown-key errors
  auto check_keys = [](const std::map<std::string, std::string>& kv,
                       const std::set<std::string>& allowed, int line) {
    for (const auto& [k, v] : kv) {
      (void)v;
      if (!allowed.count(k)) throw ParseError(line, "unknown key '" + k + "'");
    }
  };
  auto need = [](const std::map<std::string, std::string>& kv, const std::string& k,
                 int line) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ParseError(line, "missing key '" + k + "'");
    return it->second;
  };
  auto parse_from = [&](const std::map<std::string, std::string>& kv, int line,
                        std::size_t min_n, std::size_t max_n) {
    std::vector<std::string> from = detail::split_commas(need(kv, "from", line));
    if (from.size() < min_n || from.size() > max_n)
      throw ParseError(line, "from= needs " + std::to_string(min_n) +
                                 (max_n == min_n ? "" : ".." + std::to_string(max_n)) +
                                 " ids, got " + std::to_string(from.size()));
    for (const auto& f : from)
      if (!declared.count(f))
        throw ParseError(line, "reference to undeclared node '" + f + "'");
    return from;
  };

  std::istringstream is(text);
  std::string raw;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    auto toks = detail::split_ws(raw);
    if (toks.empty()) continue;

    if (toks[0] == "input") {
      if (have_input) throw ParseError(line, "duplicate input line");
      if (toks.size() != 2) throw ParseError(line, "input expects one CxHxW argument");
      std::vector<std::string> dims;
      std::string cur;
      for (char ch : toks[1]) {
        if (ch == 'x') {
          dims.push_back(cur);
          cur.clear();
        } else {
          cur.push_back(ch);
        }
      }
      dims.push_back(cur);
      if (dims.size() != 3) throw ParseError(line, "input shape must be CxHxW");
      spec.in_c = detail::parse_i64(dims[0], line, "input C");
      spec.in_h = detail::parse_i64(dims[1], line, "input H");
      spec.in_w = detail::parse_i64(dims[2], line, "input W");
      if (spec.in_c < 1 || spec.in_h < 1 || spec.in_w < 1)
        throw ParseError(line, "input dimensions must be positive");
      have_input = true;
      declared.insert(kInputId);
      continue;
    }

    if (toks[0] == "output") {
      if (have_output) throw ParseError(line, "duplicate output line");
      if (toks.size() != 2) throw ParseError(line, "output expects one node id");
      if (!declared.count(toks[1]))
        throw ParseError(line, "reference to undeclared node '" + toks[1] + "'");
      spec.output = toks[1];
      have_output = true;
      continue;
    }

    if (toks[0] != "node") throw ParseError(line, "expected input/node/output, got '" + toks[0] + "'");
    if (toks.size() < 3) throw ParseError(line, "node line needs an id and a kind");
    if (!have_input) throw ParseError(line, "node declared before input line");
    const std::size_t nodes_before = spec.nodes.size();
    const std::string& id = toks[1];
    if (!detail::valid_id(id))
      throw ParseError(line, "invalid node id '" + id + "' (use letters, digits, _)");
    if (id == kInputId) throw ParseError(line, "'input' is a reserved id");
    if (declared.count(id)) throw ParseError(line, "duplicate node id '" + id + "'");
    const std::string& kind = toks[2];

    if (kind == "conv") {
      auto kv = detail::parse_kv(toks, 3, line);
      check_keys(kv, {"out", "k", "s", "p", "from"}, line);
      LayerNode n;
      n.id = id;
      n.kind = NodeKind::conv;
      n.out = detail::parse_i64(need(kv, "out", line), line, "out");
      const std::string& kstr = need(kv, "k", line);
      auto xpos = kstr.find('x');
      if (xpos == std::string::npos) throw ParseError(line, "conv k must be <kh>x<kw>");
      n.kh = detail::parse_i64(kstr.substr(0, xpos), line, "kh");
      n.kw = detail::parse_i64(kstr.substr(xpos + 1), line, "kw");
      n.stride = detail::parse_i64(need(kv, "s", line), line, "s");
      n.pad = detail::parse_i64(need(kv, "p", line), line, "p");
      if (n.out < 1 || n.kh < 1 || n.kw < 1 || n.stride < 1 || n.pad < 0)
        throw ParseError(line, "conv hyperparameters out of range");
      n.from = parse_from(kv, line, 1, 1);
      spec.nodes.push_back(n);
    } else if (kind == "act") {
      if (toks.size() < 4) throw ParseError(line, "act needs a kind: relu|sigmoid|tanh");
      LayerNode n;
      n.id = id;
      n.kind = NodeKind::act;
      try {
        n.act = act_from_string(toks[3]);
      } catch (const ValueError&) {
        throw ParseError(line, "unknown activation '" + toks[3] + "'");
      }
      auto kv = detail::parse_kv(toks, 4, line);
      check_keys(kv, {"from"}, line);
      n.from = parse_from(kv, line, 1, 1);
      spec.nodes.push_back(n);
    } else if (kind == "pool") {
      if (toks.size() < 4) throw ParseError(line, "pool needs a kind: max|avg");
      LayerNode n;
      n.id = id;
      n.kind = NodeKind::pool;
      if (toks[3] == "max")
        n.pool = PoolKind::max;
      else if (toks[3] == "avg")
        n.pool = PoolKind::avg;
      else
        throw ParseError(line, "unknown pool kind '" + toks[3] + "'");
      auto kv = detail::parse_kv(toks, 4, line);
      check_keys(kv, {"k", "s", "p", "from"}, line);
      n.k = detail::parse_i64(need(kv, "k", line), line, "k");
      n.stride = detail::parse_i64(need(kv, "s", line), line, "s");
      n.pad = kv.count("p") ? detail::parse_i64(kv.at("p"), line, "p") : 0;
      if (n.k < 1 || n.stride < 1 || n.pad < 0 || n.pad >= n.k)
        throw ParseError(line, "pool hyperparameters out of range");
      n.from = parse_from(kv, line, 1, 1);
      spec.nodes.push_back(n);
    } else if (kind == "gap" || kind == "softmax") {
      auto kv = detail::parse_kv(toks, 3, line);
      check_keys(kv, {"from"}, line);
      LayerNode n;
      n.id = id;
      n.kind = (kind == "gap") ? NodeKind::gap : NodeKind::softmax;
      n.from = parse_from(kv, line, 1, 1);
      spec.nodes.push_back(n);
    } else if (kind == "dense") {
      auto kv = detail::parse_kv(toks, 3, line);
      check_keys(kv, {"out", "from"}, line);
      LayerNode n;
      n.id = id;
      n.kind = NodeKind::dense;
      n.out = detail::parse_i64(need(kv, "out", line), line, "out");
      if (n.out < 1) throw ParseError(line, "dense out must be >= 1");
      n.from = parse_from(kv, line, 1, 1);
      spec.nodes.push_back(n);
    } else if (kind == "dropout") {
      auto kv = detail::parse_kv(toks, 3, line);
      check_keys(kv, {"p", "from"}, line);
      LayerNode n;
      n.id = id;
      n.kind = NodeKind::dropout;
      n.p = detail::parse_f64(need(kv, "p", line), line, "p");
      if (!(n.p > 0.0 && n.p < 1.0)) throw ParseError(line, "dropout p must be in (0,1)");
      n.from = parse_from(kv, line, 1, 1);
      spec.nodes.push_back(n);
    } else if (kind == "concat") {
      auto kv = detail::parse_kv(toks, 3, line);
      check_keys(kv, {"from"}, line);
      LayerNode n;
      n.id = id;
      n.kind = NodeKind::concat;
      n.from = parse_from(kv, line, 2, 16);
      spec.nodes.push_back(n);
    } else if (kind == "add") {
      auto kv = detail::parse_kv(toks, 3, line);
      check_keys(kv, {"from"}, line);
      LayerNode n;
      n.id = id;
      n.kind = NodeKind::add;
      n.from = parse_from(kv, line, 2, 2);
      spec.nodes.push_back(n);
    } else if (kind == "inception") {
      auto kv = detail::parse_kv(toks, 3, line);
      check_keys(kv, {"n1", "r3", "n3", "r5", "n5", "pp", "mode", "from"}, line);
      InceptionConfig cfg;
      const std::string& mode = need(kv, "mode", line);
      if (mode == "naive")
        cfg.naive = true;
      else if (mode == "reduced")
        cfg.naive = false;
      else
        throw ParseError(line, "inception mode must be naive|reduced, got '" + mode + "'");
      cfg.n1 = detail::parse_i64(need(kv, "n1", line), line, "n1");
      cfg.n3 = detail::parse_i64(need(kv, "n3", line), line, "n3");
      cfg.n5 = detail::parse_i64(need(kv, "n5", line), line, "n5");
      if (!cfg.naive) {
        cfg.r3 = detail::parse_i64(need(kv, "r3", line), line, "r3");
        cfg.r5 = detail::parse_i64(need(kv, "r5", line), line, "r5");
        cfg.pp = detail::parse_i64(need(kv, "pp", line), line, "pp");
      }
      auto from = parse_from(kv, line, 1, 1);
      try {
        append_inception(spec, id, from[0], cfg);
      } catch (const ValueError& e) {
        throw ParseError(line, e.what());
      }
    } else if (kind == "residual") {
      auto kv = detail::parse_kv(toks, 3, line);
      check_keys(kv, {"layers", "out", "shortcut", "from"}, line);
      int layers = static_cast<int>(detail::parse_i64(need(kv, "layers", line), line, "layers"));
      std::int64_t out = detail::parse_i64(need(kv, "out", line), line, "out");
      const std::string& sc = need(kv, "shortcut", line);
      ShortcutKind kind_sc;
      if (sc == "identity")
        kind_sc = ShortcutKind::identity;
      else if (sc == "projection")
        kind_sc = ShortcutKind::projection;
      else
        throw ParseError(line, "shortcut must be identity|projection, got '" + sc + "'");
      auto from = parse_from(kv, line, 1, 1);
      try {
        append_residual(spec, id, from[0], layers, out, kind_sc);
      } catch (const ValueError& e) {
        throw ParseError(line, e.what());
      }
    } else if (kind == "vgg-stack") {
      auto kv = detail::parse_kv(toks, 3, line);
      check_keys(kv, {"depth", "out", "from"}, line);
      int depth = static_cast<int>(detail::parse_i64(need(kv, "depth", line), line, "depth"));
      std::int64_t out = detail::parse_i64(need(kv, "out", line), line, "out");
      auto from = parse_from(kv, line, 1, 1);
      try {
        append_vgg_stack(spec, id, from[0], depth, out);
      } catch (const ValueError& e) {
        throw ParseError(line, e.what());
      }
    } else {
      throw ParseError(line, "unknown node kind '" + kind + "'");
    }
    // declare the new node ids — a macro line contributes several
    for (std::size_t i = nodes_before; i < spec.nodes.size(); ++i) {
      const std::string& nid = spec.nodes[i].id;
      if (declared.count(nid)) throw ParseError(line, "duplicate node id '" + nid + "'");
      declared.insert(nid);
    }
  }
  if (!have_input) throw ParseError(line, "missing input line");
  if (!have_output) throw ParseError(line, "missing output line");
  if (spec.nodes.empty()) throw ParseError(line, "spec has no nodes");
  return spec;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// Emits expanded primitive node lines; macros are not reconstructed.
inline std::string render_archspec(const ArchSpec& spec) {
  std::ostringstream os;
  os << "input " << spec.in_c << "x" << spec.in_h << "x" << spec.in_w << "\n";
  for (const auto& n : spec.nodes) {
    os << "node " << n.id << " ";
    switch (n.kind) {
      case NodeKind::conv:
        os << "conv out=" << n.out << " k=" << n.kh << "x" << n.kw << " s=" << n.stride
           << " p=" << n.pad;
        break;
      case NodeKind::act: os << "act " << act_to_string(n.act); break;
      case NodeKind::pool:
        os << "pool " << (n.pool == PoolKind::max ? "max" : "avg") << " k=" << n.k
           << " s=" << n.stride << " p=" << n.pad;
        break;
      case NodeKind::gap: os << "gap"; break;
      case NodeKind::dense: os << "dense out=" << n.out; break;
      case NodeKind::dropout: os << "dropout p=" << format_double(n.p); break;
      case NodeKind::concat: os << "concat"; break;
      case NodeKind::add: os << "add"; break;
      case NodeKind::softmax: os << "softmax"; break;
    }
    os << " from=";
    for (std::size_t i = 0; i < n.from.size(); ++i) {
      if (i) os << ",";
      os << n.from[i];
    }
    os << "\n";
  }
  os << "output " << spec.output << "\n";
  return os.str();
}

}  // namespace convkit

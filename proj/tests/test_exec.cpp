#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "convkit/exec.hpp"
#include "convkit/gradcheck.hpp"
#include "convkit/params.hpp"
#include "test_util.hpp"

using namespace convkit;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

ArchSpec load_spec(const std::string& name) {
  return parse_archspec(read_file(std::string(CK_SPEC_DIR) + "/" + name), name);
}

}  // namespace

TEST_CASE("parameter inventory matches the analyzer on every shipped spec") {
  for (const char* f : {"alexnet.spec", "vgg19.spec", "desk-cnn.spec", "tiny.spec",
                        "inception-demo.spec", "residual-demo.spec"}) {
    ArchSpec s = load_spec(f);
    std::int64_t inv = 0;
    for (const auto& [name, shape] : param_inventory(s)) inv += shape_numel(shape);
    INFO(f);
    REQUIRE(inv == analyze(s).total_params);
  }
}

TEST_CASE("init_params: zero policy, gaussian statistics, determinism") {
  ArchSpec desk = load_spec("desk-cnn.spec");
  Rng rng(2024, 3);

  InitPolicy zero;
  zero.kind = InitPolicy::Kind::zero;
  ParamStore zs = init_params(desk, zero, rng);
  REQUIRE(zs.total_size() == analyze(desk).total_params);
  for (const auto& [name, t] : zs.values)
    for (std::int64_t i = 0; i < t.size(); ++i) REQUIRE(t[i] == 0.0);

  // gaussian(0, 0.01): empirical std over >= 1e4 weights within 5%
  InitPolicy g;  // defaults: gaussian, mean 0, stddev 0.01
  ParamStore gs = init_params(desk, g, rng);
  double sum = 0, sum2 = 0;
  std::int64_t count = 0;
  for (const auto& [name, t] : gs.values) {
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0) {
      for (std::int64_t i = 0; i < t.size(); ++i) REQUIRE(t[i] == 0.0);  // biases zeroed
      continue;
    }
    for (std::int64_t i = 0; i < t.size(); ++i) {
      sum += t[i];
      sum2 += t[i] * t[i];
      ++count;
    }
  }
  REQUIRE(count >= 10000);
  const double mean = sum / count;
  const double stddev = std::sqrt(sum2 / count - mean * mean);
  REQUIRE(std::abs(stddev - 0.01) < 0.05 * 0.01);

  // same seed -> identical store; different stream -> different draws
  ParamStore gs2 = init_params(desk, g, Rng(2024, 3));
  for (const auto& [name, t] : gs.values) REQUIRE(t == gs2.values.at(name));
  ParamStore gs3 = init_params(desk, g, Rng(2024, 4));
  REQUIRE_FALSE(gs3.values.at("c1.w") == gs.values.at("c1.w"));

  REQUIRE_THROWS_AS([&] {
    InitPolicy bad;
    bad.stddev = 0.0;
    init_params(desk, bad, rng);
  }(), ValueError);
}

TEST_CASE("run_graph executes the tiny net and trains signal flows") {
  ArchSpec tiny = load_spec("tiny.spec");
  Rng rng(7, 0);
  ParamStore params = init_params(tiny, InitPolicy{}, rng);
  Tensor batch = ckt::random_tensor({2, 1, 8, 8}, rng);

  ExecResult r = run_graph(tiny, params, batch);
  const Tensor& probs = r.tape.value(r.output);
  REQUIRE(probs.shape() == Shape{2, 3});
  for (std::int64_t i = 0; i < 2; ++i) {
    double row = 0;
    for (std::int64_t k = 0; k < 3; ++k) row += probs(i, k);
    REQUIRE(std::abs(row - 1.0) < 1e-12);
  }

  // with labels: fused CE loss recorded on the logits, backward fills grads
  std::vector<std::int64_t> labels{0, 2};
  ExecOptions o;
  o.labels = &labels;
  ExecResult rl = run_graph(tiny, params, batch, o);
  REQUIRE(rl.loss >= 0);
  REQUIRE(std::isfinite(rl.loss_value()));
  rl.tape.backward(rl.loss);
  for (const auto& [name, shape] : param_inventory(tiny)) {
    Tensor gr = rl.tape.grad(rl.param_of.at(name));
    REQUIRE(gr.shape() == shape);
  }

  // labels demand a softmax output
  ArchSpec headless = parse_archspec(
      "input 1x8x8\nnode c1 conv out=4 k=3x3 s=1 p=1 from=input\noutput c1\n");
  ParamStore hp = init_params(headless, InitPolicy{}, rng);
  REQUIRE_THROWS_AS(run_graph(headless, hp, batch, o), ValueError);

  // batch shape validation
  REQUIRE_THROWS_AS(run_graph(tiny, params, Tensor::zeros({2, 2, 8, 8})), ShapeError);
  REQUIRE_THROWS_AS(run_graph(tiny, params, Tensor::zeros({1, 8, 8})), ShapeError);
}

TEST_CASE("truncated execution extracts features without touching the head") {
  ArchSpec desk = load_spec("desk-cnn.spec");
  Rng rng(11, 0);
  ParamStore params = init_params(desk, InitPolicy{}, rng);
  Tensor batch = ckt::random_tensor({3, 1, 28, 28}, rng);

  ExecResult full = run_graph(desk, params, batch);
  ExecOptions trunc;
  trunc.truncate_at = "g1";
  ExecResult feat = run_graph(desk, params, batch, trunc);

  REQUIRE(feat.tape.value(feat.output) == full.value("g1"));  // bitwise
  REQUIRE(feat.tape.value(feat.output).shape() == Shape{3, 32});
  // only the parameters upstream of the cut were registered
  REQUIRE(feat.param_of.count("c1.w") == 1);
  REQUIRE(feat.param_of.count("f6.w") == 0);
  REQUIRE(feat.param_of.count("f8.w") == 0);

  ExecOptions missing;
  missing.truncate_at = "nope";
  REQUIRE_THROWS_AS(run_graph(desk, params, batch, missing), ValueError);
}

TEST_CASE("dropout execution modes: frozen, sampled, test-time scaling") {
  ArchSpec net = parse_archspec(
      "input 1x4x4\n"
      "node f1 dense out=6 from=input\n"
      "node d1 dropout p=0.5 from=f1\n"
      "node f2 dense out=2 from=d1\n"
      "node sm softmax from=f2\n"
      "output sm\n");
  Rng rng(5, 9);
  ParamStore params = init_params(net, InitPolicy{}, rng);
  Tensor batch = ckt::random_tensor({2, 1, 4, 4}, rng);

  // training mode needs an rng and records the sampled mask
  ExecOptions train;
  train.training = true;
  REQUIRE_THROWS_AS(run_graph(net, params, batch, train), ValueError);
  Rng drng(31, 1);
  train.rng = &drng;
  ExecResult rt = run_graph(net, params, batch, train);
  REQUIRE(rt.masks.count("d1") == 1);
  const Tensor& mask = rt.masks.at("d1");
  for (std::int64_t i = 0; i < mask.size(); ++i)
    REQUIRE((mask[i] == 0.0 || mask[i] == 1.0));

  // frozen mask reproduces the same forward bitwise
  ExecOptions frozen;
  std::map<std::string, Tensor> fm{{"d1", mask}};
  frozen.frozen_masks = &fm;
  ExecResult rf = run_graph(net, params, batch, frozen);
  REQUIRE(rf.tape.value(rf.output) == rt.tape.value(rt.output));

  // test time: the dropout node multiplies by p exactly
  ExecResult re = run_graph(net, params, batch);
  Tensor pre = re.value("f1");
  Tensor post = re.value("d1");
  for (std::int64_t i = 0; i < pre.size(); ++i) REQUIRE(post[i] == 0.5 * pre[i]);
}

TEST_CASE("residual block with zero inner parameters is relu of its input") {
  ArchSpec block;
  block.in_c = 3;
  block.in_h = block.in_w = 6;
  append_residual(block, "r", kInputId, 2, 3, ShortcutKind::identity);
  block.output = "r";
  InitPolicy zero;
  zero.kind = InitPolicy::Kind::zero;
  Rng rng(42, 0);
  ParamStore params = init_params(block, zero, rng);

  Tensor x = ckt::random_tensor({2, 3, 6, 6}, rng);  // mixed signs
  ExecResult r = run_graph(block, params, x);
  const Tensor& y = r.tape.value(r.output);
  for (std::int64_t i = 0; i < x.size(); ++i) REQUIRE(y[i] == std::max(0.0, x[i]));

  // nonnegative input -> exact identity
  Tensor xp = ckt::random_tensor({2, 3, 6, 6}, rng, 0.0, 1.0);
  ExecResult rp = run_graph(block, params, xp);
  REQUIRE(rp.tape.value(rp.output) == xp);
}

TEST_CASE("projection shortcut with identity weights matches the identity shortcut") {
  auto build = [](ShortcutKind kind) {
    ArchSpec s;
    s.in_c = 4;
    s.in_h = s.in_w = 5;
    append_residual(s, "r", kInputId, 2, 4, kind);
    s.output = "r";
    return s;
  };
  ArchSpec ident = build(ShortcutKind::identity);
  ArchSpec proj = build(ShortcutKind::projection);

  Rng rng(77, 2);
  ParamStore pi = init_params(ident, InitPolicy{}, rng);
  ParamStore pp = init_params(proj, InitPolicy{}, rng);
  for (const auto& [name, t] : pi.values) pp.values.at(name) = t;  // share inner weights
  Tensor& ws = pp.values.at("r.proj.w");  // (4,4,1,1)
  for (std::int64_t o = 0; o < 4; ++o)
    for (std::int64_t c = 0; c < 4; ++c) ws(o, c, 0, 0) = (o == c) ? 1.0 : 0.0;

  Tensor x = ckt::random_tensor({2, 4, 5, 5}, rng);
  ExecResult ri = run_graph(ident, pi, x);
  ExecResult rp = run_graph(proj, pp, x);
  REQUIRE(ckt::max_abs_diff(ri.tape.value(ri.output), rp.tape.value(rp.output)) < 1e-14);
}

TEST_CASE("inception block maps constant input to zeros under zero weights") {
  // reduced mode: every branch ends in a convolution, so zero weights + zero
  // bias wipe the pool branch too
  ArchSpec s;
  s.in_c = 3;
  s.in_h = s.in_w = 8;
  InceptionConfig cfg;
  cfg.n1 = 2;
  cfg.r3 = 2;
  cfg.n3 = 3;
  cfg.r5 = 2;
  cfg.n5 = 2;
  cfg.pp = 2;
  cfg.naive = false;
  append_inception(s, "i", kInputId, cfg);
  s.output = "i";
  InitPolicy zero;
  zero.kind = InitPolicy::Kind::zero;
  Rng rng(3, 3);
  ParamStore params = init_params(s, zero, rng);
  ExecResult r = run_graph(s, params, Tensor::full({2, 3, 8, 8}, 0.7));
  const Tensor& y = r.tape.value(r.output);
  REQUIRE(y.shape() == Shape{2, 2 + 3 + 2 + 2, 8, 8});
  for (std::int64_t i = 0; i < y.size(); ++i) REQUIRE(y[i] == 0.0);

  // naive mode with zero input: the pass-through pool branch is zero as well
  ArchSpec nv;
  nv.in_c = 3;
  nv.in_h = nv.in_w = 8;
  cfg.naive = true;
  append_inception(nv, "i", kInputId, cfg);
  nv.output = "i";
  ParamStore np = init_params(nv, zero, rng);
  ExecResult rn = run_graph(nv, np, Tensor::zeros({1, 3, 8, 8}));
  const Tensor& yn = rn.tape.value(rn.output);
  for (std::int64_t i = 0; i < yn.size(); ++i) REQUIRE(yn[i] == 0.0);
}

TEST_CASE("gradcheck: linear layer with MSE loss passes") {
  ArchSpec lin = parse_archspec(
      "input 1x3x3\nnode f1 dense out=4 from=input\noutput f1\n");
  Rng rng(19, 0);
  ParamStore params = init_params(lin, InitPolicy{}, rng);
  Tensor batch = ckt::random_tensor({3, 1, 3, 3}, rng);
  GradcheckReport rep = gradcheck(lin, params, batch);
  REQUIRE(rep.pass);
  REQUIRE(rep.entries.size() == 2);
  for (const auto& e : rep.entries) {
    REQUIRE(e.pass);
    REQUIRE(e.compared == shape_numel(param_inventory(lin)[&e - rep.entries.data()].second));
  }
}

TEST_CASE("gradcheck: conv + relu + gap + softmax-CE passes") {
  ArchSpec tiny = load_spec("tiny.spec");
  Rng rng(23, 1);
  // weights at sigma 0.1 keep pre-activations clear of the ReLU kink, so the
  // finite-difference comparison is not vacuously masked
  InitPolicy init;
  init.stddev = 0.1;
  ParamStore params = init_params(tiny, init, rng);
  Tensor batch = ckt::random_tensor({2, 1, 8, 8}, rng);
  GradcheckReport rep = gradcheck(tiny, params, batch);
  REQUIRE(rep.pass);
  std::int64_t compared = 0;
  for (const auto& e : rep.entries) compared += e.compared;
  REQUIRE(compared > 0);

  // machine lines follow `PARAM <name> <err> <PASS|FAIL>`
  std::regex line_re(R"(PARAM [A-Za-z0-9_.]+ \d\.\d{3}e[+-]\d{2,3} (PASS|FAIL))");
  for (const std::string& line : rep.machine_lines()) {
    INFO(line);
    REQUIRE(std::regex_match(line, line_re));
  }
  REQUIRE(rep.table().find("OVERALL PASS") != std::string::npos);
}

TEST_CASE("gradcheck: two-conv residual block passes") {
  ArchSpec block;
  block.in_c = 2;
  block.in_h = block.in_w = 6;
  append_residual(block, "r", kInputId, 2, 2, ShortcutKind::identity);
  block.output = "r";
  Rng rng(29, 4);
  InitPolicy init;
  init.stddev = 0.1;
  ParamStore params = init_params(block, init, rng);
  Tensor batch = ckt::random_tensor({2, 2, 6, 6}, rng);
  GradcheckReport rep = gradcheck(block, params, batch);
  REQUIRE(rep.pass);
  for (const auto& e : rep.entries) REQUIRE(e.compared > 0);
}

TEST_CASE("gradcheck: frozen dropout masks keep the check deterministic") {
  ArchSpec net = parse_archspec(
      "input 1x4x4\n"
      "node f1 dense out=8 from=input\n"
      "node d1 dropout p=0.5 from=f1\n"
      "node f2 dense out=3 from=d1\n"
      "node sm softmax from=f2\n"
      "output sm\n");
  Rng rng(31, 0);
  InitPolicy init;
  init.stddev = 0.1;
  ParamStore params = init_params(net, init, rng);
  Tensor batch = ckt::random_tensor({2, 1, 4, 4}, rng);
  GradcheckReport rep = gradcheck(net, params, batch);
  REQUIRE(rep.pass);
}

TEST_CASE("gradcheck: corrupted conv backward fails on the conv weight") {
  ArchSpec tiny = load_spec("tiny.spec");
  Rng rng(37, 2);
  InitPolicy init;
  init.stddev = 0.1;
  ParamStore params = init_params(tiny, init, rng);
  Tensor batch = ckt::random_tensor({2, 1, 8, 8}, rng);

  conv_backward_fault() = true;
  GradcheckReport bad = gradcheck(tiny, params, batch);
  conv_backward_fault() = false;

  REQUIRE_FALSE(bad.pass);
  bool conv_w_failed = false;
  for (const auto& e : bad.entries) {
    if (e.name == "c1.w" && !e.pass) conv_w_failed = true;
    if (e.name == "c1.b" || e.name == "f1.w" || e.name == "f1.b") REQUIRE(e.pass);
  }
  REQUIRE(conv_w_failed);
}

TEST_CASE("gradcheck: budget enforced before any forward pass") {
  ArchSpec alex = load_spec("alexnet.spec");
  Rng rng(41, 0);
  InitPolicy zero;
  zero.kind = InitPolicy::Kind::zero;
  ParamStore params = init_params(alex, zero, rng);
  Tensor batch = Tensor::zeros({1, 3, 227, 227});
  REQUIRE_THROWS_AS(gradcheck(alex, params, batch), BudgetError);
}

#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "convkit/archspec.hpp"
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

const char* kMinimal = R"(input 1x8x8
node c1 conv out=4 k=3x3 s=1 p=1 from=input
output c1
)";

}  // namespace

TEST_CASE("minimal file parses") {
  ArchSpec s = parse_archspec(kMinimal);
  REQUIRE(s.in_c == 1);
  REQUIRE(s.in_h == 8);
  REQUIRE(s.nodes.size() == 1);
  REQUIRE(s.nodes[0].kind == NodeKind::conv);
  REQUIRE(s.nodes[0].kh == 3);
  REQUIRE(s.output == "c1");
}

TEST_CASE("parser reports line-numbered structured errors") {
  // undeclared reference names the id and the line
  try {
    parse_archspec("input 1x4x4\nnode c1 conv out=2 k=3x3 s=1 p=1 from=nope\noutput c1\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(e.line == 2);
    REQUIRE(std::string(e.what()).find("nope") != std::string::npos);
  }

  // forward references are banned (DAG by construction)
  REQUIRE_THROWS_AS(
      parse_archspec("input 1x4x4\nnode a1 act relu from=c1\n"
                     "node c1 conv out=2 k=3x3 s=1 p=1 from=input\noutput c1\n"),
      ParseError);

  REQUIRE_THROWS_AS(parse_archspec("node c1 conv out=2 k=3x3 s=1 p=1 from=input\noutput c1\n"),
                    ParseError);  // node before input
  REQUIRE_THROWS_AS(parse_archspec("input 1x4x4\noutput c1\n"), ParseError);  // undeclared output
  REQUIRE_THROWS_AS(parse_archspec("input 1x4x4\n"), ParseError);             // no output
  REQUIRE_THROWS_AS(
      parse_archspec("input 1x4x4\nnode c1 conv out=2 k=3x3 s=1 p=1 zoom=1 from=input\noutput c1\n"),
      ParseError);  // unknown key
  REQUIRE_THROWS_AS(
      parse_archspec("input 1x4x4\nnode c1 conv out=2 k=3 s=1 p=1 from=input\noutput c1\n"),
      ParseError);  // conv k must be AxB
  REQUIRE_THROWS_AS(
      parse_archspec("input 1x4x4\nnode c1 conv out=2 k=3x3 s=1 p=1 from=input\n"
                     "node c1 conv out=2 k=3x3 s=1 p=1 from=input\noutput c1\n"),
      ParseError);  // duplicate id
  REQUIRE_THROWS_AS(
      parse_archspec("input 1x4x4\nnode input act relu from=input\noutput input\n"),
      ParseError);  // reserved id
  REQUIRE_THROWS_AS(parse_archspec("input 1x4x4\nwibble\noutput c1\n"), ParseError);
}

TEST_CASE("render then parse is the identity on all shipped specs") {
  for (const char* f : {"alexnet.spec", "vgg19.spec", "desk-cnn.spec", "tiny.spec",
                        "inception-demo.spec", "residual-demo.spec"}) {
    std::string text = read_file(std::string(CK_SPEC_DIR) + "/" + f);
    ArchSpec parsed = parse_archspec(text, f);
    ArchSpec reparsed = parse_archspec(render_archspec(parsed), f);
    INFO(f);
    REQUIRE(parsed == reparsed);
  }
}

TEST_CASE("shape inference hand traces") {
  ArchSpec alex = parse_archspec(read_file(std::string(CK_SPEC_DIR) + "/alexnet.spec"));
  auto shapes = infer_shapes(alex);
  REQUIRE(shapes.at("c1") == Shape{96, 55, 55});
  REQUIRE(shapes.at("p1") == Shape{96, 27, 27});
  REQUIRE(shapes.at("p2") == Shape{256, 13, 13});
  REQUIRE(shapes.at("p5") == Shape{256, 6, 6});  // rank-3 feature map before classifier
  REQUIRE(shapes.at("p5").size() == 3);
  REQUIRE(shapes.at("f8") == Shape{1000});

  // concat arithmetic: 64 + 128 -> 192 channels
  ArchSpec cc = parse_archspec(
      "input 3x8x8\n"
      "node b1 conv out=64 k=1x1 s=1 p=0 from=input\n"
      "node b2 conv out=128 k=3x3 s=1 p=1 from=input\n"
      "node j concat from=b1,b2\n"
      "output j\n");
  REQUIRE(infer_shapes(cc).at("j") == Shape{192, 8, 8});

  // empty spec is an error
  ArchSpec empty;
  empty.in_c = empty.in_h = empty.in_w = 4;
  REQUIRE_THROWS_AS(infer_shapes(empty), ValueError);

  // fail-fast with the offending node id
  ArchSpec bad = parse_archspec(
      "input 1x4x4\n"
      "node c1 conv out=2 k=3x3 s=1 p=0 from=input\n"
      "node c2 conv out=2 k=5x5 s=1 p=0 from=c1\n"  // 2x2 input, 5x5 kernel: degenerate
      "output c2\n");
  try {
    infer_shapes(bad);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    REQUIRE(std::string(e.what()).find("'c2'") != std::string::npos);
  }
}

TEST_CASE("vgg stacks: receptive fields and parameter algebra") {
  // depth 2 -> rf 5; depth 3 -> rf 7
  for (auto [depth, rf] : std::vector<std::pair<int, std::int64_t>>{{2, 5}, {3, 7}}) {
    ArchSpec s;
    s.in_c = 8;
    s.in_h = s.in_w = 16;
    append_vgg_stack(s, "v", kInputId, depth, 8);
    s.output = "v";
    auto rep = analyze(s);
    REQUIRE(rep.nodes.back().rf == rf);
  }

  // generalization: a k-stack of 3x3 stride-1 convs has rf 2k+1
  for (int k = 1; k <= 6; ++k) {
    ArchSpec s;
    s.in_c = 4;
    s.in_h = s.in_w = 20;
    std::string prev = kInputId;
    for (int i = 0; i < k; ++i) {
      LayerNode c;
      c.id = "c" + std::to_string(i);
      c.kind = NodeKind::conv;
      c.out = 4;
      c.kh = c.kw = 3;
      c.stride = 1;
      c.pad = 1;
      c.from = {prev};
      s.nodes.push_back(c);
      prev = c.id;
    }
    s.output = prev;
    REQUIRE(analyze(s).nodes.back().rf == 2 * k + 1);
  }

  // depth 3, C channels in and out: 27C^2 weights + 3C biases
  const std::int64_t C = 8;
  ArchSpec s;
  s.in_c = C;
  s.in_h = s.in_w = 16;
  append_vgg_stack(s, "v", kInputId, 3, C);
  s.output = "v";
  REQUIRE(analyze(s).total_params == 27 * C * C + 3 * C);

  // weight ratio single 7x7 vs 3-stack of 3x3: 49/27 (81% more)
  ArchSpec single;
  single.in_c = C;
  single.in_h = single.in_w = 16;
  LayerNode c7;
  c7.id = "c7";
  c7.kind = NodeKind::conv;
  c7.out = C;
  c7.kh = c7.kw = 7;
  c7.stride = 1;
  c7.pad = 3;
  c7.from = {kInputId};
  single.nodes.push_back(c7);
  single.output = "c7";
  const std::int64_t w_single = analyze(single).total_params - C;      // drop bias
  const std::int64_t w_stack = analyze(s).total_params - 3 * C;        // drop biases
  REQUIRE(w_single * 27 == w_stack * 49);  // exact 49C^2 : 27C^2
  REQUIRE(w_single == 49 * C * C);
  REQUIRE(w_stack == 27 * C * C);

  REQUIRE_THROWS_AS(append_vgg_stack(s, "bad", kInputId, 4, C), ValueError);
}

TEST_CASE("shipped AlexNet and VGG-19 match published totals") {
  ArchSpec alex = parse_archspec(read_file(std::string(CK_SPEC_DIR) + "/alexnet.spec"));
  auto arep = analyze(alex);
  REQUIRE(arep.total_params == 62378344);  // exact count for the ungrouped form
  REQUIRE(std::llabs(arep.total_params - 60000000) <= 60000000 / 20);  // 60M +- 5%
  REQUIRE(arep.param_depth == 8);

  ArchSpec vgg = parse_archspec(read_file(std::string(CK_SPEC_DIR) + "/vgg19.spec"));
  auto vrep = analyze(vgg);
  REQUIRE(vrep.total_params == 143667240);
  REQUIRE(std::llabs(vrep.total_params - 144000000) <= 144000000 / 20);  // 144M +- 5%
  REQUIRE(vrep.param_depth == 19);
}

TEST_CASE("gap and pool report zero parameters") {
  ArchSpec s = parse_archspec(
      "input 4x8x8\n"
      "node p1 pool max k=2 s=2 p=0 from=input\n"
      "node g1 gap from=p1\n"
      "output g1\n");
  auto rep = analyze(s);
  for (const auto& n : rep.nodes) REQUIRE(n.params == 0);
  REQUIRE(rep.total_params == 0);
  REQUIRE(rep.param_depth == 0);
}

TEST_CASE("inception: channel arithmetic, naive vs reduced FLOPs") {
  const std::int64_t cin = 192, hw = 28;
  auto build = [&](bool naive) {
    ArchSpec s;
    s.in_c = cin;
    s.in_h = s.in_w = hw;
    InceptionConfig cfg;
    cfg.n1 = 64;
    cfg.r3 = 96;
    cfg.n3 = 128;
    cfg.r5 = 16;
    cfg.n5 = 32;
    cfg.pp = 32;
    cfg.naive = naive;
    append_inception(s, "i", kInputId, cfg);
    s.output = "i";
    return s;
  };

  ArchSpec naive = build(true), reduced = build(false);
  auto shapes_n = infer_shapes(naive);
  auto shapes_r = infer_shapes(reduced);
  // naive pool branch passes all input channels through
  REQUIRE(shapes_n.at("i") == Shape{64 + 128 + 32 + cin, hw, hw});
  REQUIRE(shapes_r.at("i") == Shape{64 + 128 + 32 + 32, hw, hw});

  auto rep_n = analyze(naive);
  auto rep_r = analyze(reduced);

  // independent MAC oracle: out_maps * H * W * in_maps * kh * kw per conv
  auto conv_macs = [&](std::int64_t out, std::int64_t in, std::int64_t k) {
    return out * hw * hw * in * k * k;
  };
  const std::int64_t want_naive =
      conv_macs(64, cin, 1) + conv_macs(128, cin, 3) + conv_macs(32, cin, 5);
  const std::int64_t want_reduced = conv_macs(64, cin, 1) + conv_macs(96, cin, 1) +
                                    conv_macs(128, 96, 3) + conv_macs(16, cin, 1) +
                                    conv_macs(32, 16, 5) + conv_macs(32, cin, 1);
  REQUIRE(rep_n.total_macs == want_naive);
  REQUIRE(rep_r.total_macs == want_reduced);
  REQUIRE(rep_r.total_macs < rep_n.total_macs);  // the dimension-reduction point

  // branches have different receptive fields: footnote flag set, max reported
  REQUIRE(rep_n.multibranch_rf);
  REQUIRE(rep_n.nodes.back().rf == 5);

  InceptionConfig bad;
  bad.n1 = 0;
  bad.n3 = 1;
  bad.n5 = 1;
  bad.naive = true;
  ArchSpec tmp;
  tmp.in_c = 4;
  tmp.in_h = tmp.in_w = 8;
  REQUIRE_THROWS_AS(append_inception(tmp, "i", kInputId, bad), ValueError);
}

TEST_CASE("residual macro structure and identity-shortcut validation") {
  ArchSpec demo = parse_archspec(read_file(std::string(CK_SPEC_DIR) + "/residual-demo.spec"));
  auto shapes = infer_shapes(demo);
  REQUIRE(shapes.at("r1") == Shape{8, 16, 16});
  REQUIRE(shapes.at("r2") == Shape{8, 16, 16});
  // longest path: c1 + (r1: 2 convs) + (r2: 2 convs) + dense = 6 parameter layers
  REQUIRE(analyze(demo).param_depth == 6);

  // the second ReLU lives after the addition: the block's final node is an act
  const LayerNode* last = demo.find("r1");
  REQUIRE(last != nullptr);
  REQUIRE(last->kind == NodeKind::act);
  REQUIRE(demo.find("r1.add") != nullptr);

  // identity shortcut with mismatched channels fails shape inference at the add
  ArchSpec bad;
  bad.in_c = 4;
  bad.in_h = bad.in_w = 8;
  append_residual(bad, "r", kInputId, 2, 6, ShortcutKind::identity);
  bad.output = "r";
  try {
    infer_shapes(bad);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    REQUIRE(std::string(e.what()).find("r.add") != std::string::npos);
  }

  // projection shortcut fixes it
  ArchSpec ok;
  ok.in_c = 4;
  ok.in_h = ok.in_w = 8;
  append_residual(ok, "r", kInputId, 2, 6, ShortcutKind::projection);
  ok.output = "r";
  REQUIRE(infer_shapes(ok).at("r") == Shape{6, 8, 8});

  REQUIRE_THROWS_AS(append_residual(ok, "r4", kInputId, 4, 6, ShortcutKind::identity),
                    ValueError);

  // three-layer variant expands to three convs
  ArchSpec three;
  three.in_c = 4;
  three.in_h = three.in_w = 8;
  append_residual(three, "r", kInputId, 3, 4, ShortcutKind::identity);
  three.output = "r";
  int convs = 0;
  for (const auto& n : three.nodes)
    if (n.kind == NodeKind::conv) ++convs;
  REQUIRE(convs == 3);
}

TEST_CASE("macro lines expand to the same nodes as the builders") {
  ArchSpec via_text = parse_archspec(
      "input 4x8x8\n"
      "node r1 residual layers=2 out=4 shortcut=identity from=input\n"
      "output r1\n");
  ArchSpec via_builder;
  via_builder.in_c = 4;
  via_builder.in_h = via_builder.in_w = 8;
  append_residual(via_builder, "r1", kInputId, 2, 4, ShortcutKind::identity);
  via_builder.output = "r1";
  REQUIRE(via_text == via_builder);
}

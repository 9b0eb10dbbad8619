#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "convkit/autodiff.hpp"
#include "test_util.hpp"

using namespace convkit;

TEST_CASE("record computes values eagerly and counts ops") {
  Tape t;
  int x = t.leaf(Tensor({2}, {1, 2}));
  int y = t.leaf(Tensor({2}, {3, 4}));
  int s = t_add(t, x, y);
  REQUIRE(t.value(s)[0] == 4.0);
  REQUIRE(t.value(s)[1] == 6.0);

  int m = t_mul(t, s, s);
  int q = t_sum(t, m);
  (void)q;
  REQUIRE(t.num_ops() == 3);  // add, mul, sum — leaves excluded
  REQUIRE(t.num_nodes() == 5);
}

TEST_CASE("unknown op tag is rejected") {
  Tape t;
  int x = t.leaf(Tensor({1}, {1.0}));
  REQUIRE_THROWS_AS(t.record("frobnicate", {x}, Tensor({1}, {0.0}), {}), UnknownOpError);
}

TEST_CASE("cycles are impossible: input ids must precede the new node") {
  Tape t;
  int x = t.leaf(Tensor({1}, {1.0}));
  (void)x;
  register_op("add");
  // referencing a node id that does not exist yet
  REQUIRE_THROWS_AS(t.record("add", {7}, Tensor({1}, {0.0}), {}), ValueError);
  // and ids are monotone as recorded
  Tape t2;
  int a = t2.leaf(Tensor({1}, {1.0}));
  int b = t_add(t2, a, a);
  int c = t_add(t2, b, a);
  REQUIRE(a < b);
  REQUIRE(b < c);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape t;
  int x = t.leaf(Tensor({3}, {1, 2, 3}), true);
  int y = t_add(t, x, x);
  REQUIRE_THROWS_AS(t.backward(y), ValueError);
}

TEST_CASE("grad of sum is ones") {
  Tape t;
  int x = t.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}), true);
  int s = t_sum(t, x);
  t.backward(s);
  Tensor g = t.grad(x);
  REQUIRE(g.shape() == Shape{2, 3});
  for (std::int64_t i = 0; i < 6; ++i) REQUIRE(g[i] == 1.0);
}

TEST_CASE("grad of sum of squares is 2x") {
  Tape t;
  int x = t.leaf(Tensor({3}, {1, -2, 3}), true);
  int m = t_mul(t, x, x);
  int s = t_sum(t, m);
  t.backward(s);
  Tensor g = t.grad(x);
  REQUIRE(g[0] == 2.0);
  REQUIRE(g[1] == -4.0);
  REQUIRE(g[2] == 6.0);
}

TEST_CASE("zero loss via multiply-by-zero gives exactly zero gradients") {
  Rng rng(4);
  Tape t;
  int x = t.leaf(ckt::random_tensor({4, 4}, rng), true);
  int z = t.leaf(Tensor::zeros({4, 4}));
  int m = t_mul(t, x, z);
  int s = t_sum(t, m);
  t.backward(s);
  Tensor g = t.grad(x);
  for (std::int64_t i = 0; i < g.size(); ++i) REQUIRE(g[i] == 0.0);
}

TEST_CASE("leaves not reachable from the loss get zero gradients") {
  Tape t;
  int x = t.leaf(Tensor({2}, {1, 2}), true);
  int y = t.leaf(Tensor({3}, {5, 5, 5}), true);
  (void)y;
  int s = t_sum(t, x);
  t.backward(s);
  Tensor gy = t.grad(y);
  REQUIRE(gy.shape() == Shape{3});
  for (std::int64_t i = 0; i < 3; ++i) REQUIRE(gy[i] == 0.0);
}

TEST_CASE("fan-out accumulates additively") {
  // L = sum(x + x) → dL/dx = 2
  Tape t;
  int x = t.leaf(Tensor({2}, {3, 4}), true);
  int s = t_add(t, x, x);
  int l = t_sum(t, s);
  t.backward(l);
  REQUIRE(t.grad(x)[0] == 2.0);
  REQUIRE(t.grad(x)[1] == 2.0);
}

// -----------------------------------------------------------------------
// Finite-difference oracle. Rebuilds the whole computation from parameter
// vectors via a caller-supplied closure; central differences with eps=1e-6.
// -----------------------------------------------------------------------
namespace {

using LossFn = std::function<double(const std::vector<Tensor>&)>;

double fd_max_rel_err(std::vector<Tensor> params, const LossFn& loss,
                      const std::vector<Tensor>& analytic) {
  const double eps = 1e-6;
  double worst = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::int64_t i = 0; i < params[p].size(); ++i) {
      const double orig = params[p][i];
      params[p][i] = orig + eps;
      const double lp = loss(params);
      params[p][i] = orig - eps;
      const double lm = loss(params);
      params[p][i] = orig;
      const double num = (lp - lm) / (2 * eps);
      worst = std::max(worst, ckt::rel_err(analytic[p][i], num));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("random 3-layer MLP matches central finite differences") {
  Rng rng(20240917);
  // x(4,5) -> W1(5,6)+b1 -> square -> W2(6,4)+b2 -> square -> W3(4,2)+b3 -> mse
  Tensor x = ckt::random_tensor({4, 5}, rng);
  Tensor target = ckt::random_tensor({4, 2}, rng);
  std::vector<Tensor> params = {
      ckt::random_gaussian({5, 6}, rng, 0.4), ckt::random_gaussian({6}, rng, 0.1),
      ckt::random_gaussian({6, 4}, rng, 0.4), ckt::random_gaussian({4}, rng, 0.1),
      ckt::random_gaussian({4, 2}, rng, 0.4), ckt::random_gaussian({2}, rng, 0.1)};

  struct Built {
    Tape tape;
    std::vector<int> pids;
    int loss = -1;
  };
  auto build = [&](const std::vector<Tensor>& ps) {
    auto b = std::make_unique<Built>();
    Tape& t = b->tape;
    int xin = t.leaf(x);
    for (const auto& pt : ps) b->pids.push_back(t.leaf(pt, true));
    int h1 = t_bias_add(t, t_matmul(t, xin, b->pids[0]), b->pids[1], 1);
    h1 = t_mul(t, h1, h1);
    int h2 = t_bias_add(t, t_matmul(t, h1, b->pids[2]), b->pids[3], 1);
    h2 = t_mul(t, h2, h2);
    int out = t_bias_add(t, t_matmul(t, h2, b->pids[4]), b->pids[5], 1);
    int tgt = t.leaf(target);
    int d = t_sub(t, out, tgt);
    b->loss = t_mean(t, t_mul(t, d, d));
    return b;
  };

  auto built = build(params);
  built->tape.backward(built->loss);
  std::vector<Tensor> analytic;
  for (int pid : built->pids) analytic.push_back(built->tape.grad(pid));

  auto loss_only = [&](const std::vector<Tensor>& ps) {
    auto b = build(ps);
    return b->tape.value(b->loss)[0];
  };
  double worst = fd_max_rel_err(params, loss_only, analytic);
  INFO("max relative error " << worst);
  REQUIRE(worst < 1e-5);
}

TEST_CASE("deliberately corrupted backward is caught by the FD oracle") {
  Rng rng(77);
  Tensor x = ckt::random_tensor({3, 4}, rng);
  std::vector<Tensor> params = {ckt::random_gaussian({4, 2}, rng, 0.5)};

  // forward: loss = sum(x W); corrupted backward scales the true gradient.
  register_op("matmul");
  auto build_corrupt = [&](const std::vector<Tensor>& ps, bool corrupt) {
    auto t = std::make_unique<Tape>();
    int xin = t->leaf(x);
    int w = t->leaf(ps[0], true);
    Tensor v = matmul(x, ps[0]);
    double fudge = corrupt ? 1.01 : 1.0;
    int mm = t->record("matmul", {xin, w}, std::move(v), [xin, w, fudge](Tape& tp, const Tensor& g) {
      tp.accum(xin, matmul(g, transpose(tp.value(w))));
      tp.accum(w, scale(matmul(transpose(tp.value(xin)), g), fudge));
    });
    int l = t_sum(*t, mm);
    return std::make_pair(std::move(t), std::make_pair(w, l));
  };

  auto [tape, ids] = build_corrupt(params, true);
  tape->backward(ids.second);
  std::vector<Tensor> analytic = {tape->grad(ids.first)};
  auto loss_only = [&](const std::vector<Tensor>& ps) {
    auto [t2, ids2] = build_corrupt(ps, true);
    return t2->value(ids2.second)[0];
  };
  double worst = fd_max_rel_err(params, loss_only, analytic);
  REQUIRE(worst > 1e-4);  // the checker must flag the corruption

  // sanity: the uncorrupted version passes
  auto [tape3, ids3] = build_corrupt(params, false);
  tape3->backward(ids3.second);
  std::vector<Tensor> good = {tape3->grad(ids3.first)};
  auto loss3 = [&](const std::vector<Tensor>& ps) {
    auto [t4, ids4] = build_corrupt(ps, false);
    return t4->value(ids4.second)[0];
  };
  REQUIRE(fd_max_rel_err(params, loss3, good) < 1e-5);
}

TEST_CASE("gradient is linear in the loss") {
  Rng rng(909);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor xv = ckt::random_tensor({5}, rng);
    Tensor w1 = ckt::random_tensor({5}, rng);
    Tensor w2 = ckt::random_tensor({5}, rng);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);

    // f = sum(x*w1*x), g = sum(x*w2)
    auto grad_f = [&](double ca) {
      Tape t;
      int x = t.leaf(xv, true);
      int f = t_sum(t, t_mul(t, t_mul(t, x, t.leaf(w1)), x));
      t.backward(t_scale(t, f, ca));
      return t.grad(x);
    };
    auto grad_g = [&](double cb) {
      Tape t;
      int x = t.leaf(xv, true);
      int g = t_sum(t, t_mul(t, x, t.leaf(w2)));
      t.backward(t_scale(t, g, cb));
      return t.grad(x);
    };
    // combined: a*f + b*g on one tape
    Tape t;
    int x = t.leaf(xv, true);
    int f = t_sum(t, t_mul(t, t_mul(t, x, t.leaf(w1)), x));
    int g = t_sum(t, t_mul(t, x, t.leaf(w2)));
    int l = t_add(t, t_scale(t, f, a), t_scale(t, g, b));
    t.backward(l);
    Tensor combined = t.grad(x);

    Tensor expect = grad_f(a) + grad_g(b);
    REQUIRE(ckt::max_abs_diff(combined, expect) < 1e-10);
  }
}

TEST_CASE("kink meter tracks the running minimum per thread") {
  kink_reset();
  REQUIRE(std::isinf(kink_margin()));
  kink_note(0.5);
  kink_note(0.125);
  kink_note(0.9);
  REQUIRE(kink_margin() == 0.125);
  kink_reset();
  REQUIRE(std::isinf(kink_margin()));
}

TEST_CASE("reshape op round-trips gradients") {
  Rng rng(303);
  Tape t;
  Tensor xv = ckt::random_tensor({2, 6}, rng);
  int x = t.leaf(xv, true);
  int r = t_reshape(t, x, {3, 4});
  int l = t_sum(t, t_mul(t, r, r));
  t.backward(l);
  Tensor g = t.grad(x);
  REQUIRE(g.shape() == Shape{2, 6});
  for (std::int64_t i = 0; i < 12; ++i) REQUIRE(g[i] == 2.0 * xv[i]);
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <regex>

#include "convkit/experiments.hpp"
#include "convkit/train.hpp"
#include "test_util.hpp"

using namespace convkit;

namespace {

// logistic head straight from the input pixels
ArchSpec make_linear_net(std::int64_t in_c, std::int64_t h, std::int64_t w,
                         std::int64_t classes) {
  ArchSpec s;
  s.in_c = in_c;
  s.in_h = h;
  s.in_w = w;
  LayerNode f;
  f.id = "f1";
  f.kind = NodeKind::dense;
  f.from = {kInputId};
  f.out = classes;
  s.nodes.push_back(f);
  LayerNode sm;
  sm.id = "sm";
  sm.kind = NodeKind::softmax;
  sm.from = {"f1"};
  s.nodes.push_back(sm);
  s.output = "sm";
  return s;
}

ArchSpec make_tiny_conv_net(std::int64_t in_c, std::int64_t size, std::int64_t classes) {
  ArchSpec s;
  s.in_c = in_c;
  s.in_h = size;
  s.in_w = size;
  LayerNode c;
  c.id = "c1";
  c.kind = NodeKind::conv;
  c.from = {kInputId};
  c.out = 4;
  c.kh = c.kw = 3;
  c.stride = 1;
  c.pad = 1;
  s.nodes.push_back(c);
  LayerNode a;
  a.id = "a1";
  a.kind = NodeKind::act;
  a.from = {"c1"};
  a.act = ActKind::relu;
  s.nodes.push_back(a);
  LayerNode g;
  g.id = "g1";
  g.kind = NodeKind::gap;
  g.from = {"a1"};
  s.nodes.push_back(g);
  LayerNode f;
  f.id = "f1";
  f.kind = NodeKind::dense;
  f.from = {"g1"};
  f.out = classes;
  s.nodes.push_back(f);
  LayerNode sm;
  sm.id = "sm";
  sm.kind = NodeKind::softmax;
  sm.from = {"f1"};
  s.nodes.push_back(sm);
  s.output = "sm";
  return s;
}

// two gaussian point clouds in the plane, stored as (n, 2, 1, 1) images
Dataset make_blobs(std::int64_t per_class, double spread, std::uint64_t seed) {
  Dataset ds;
  ds.num_classes = 2;
  const std::int64_t n = 2 * per_class;
  ds.images = Tensor({n, 2, 1, 1});
  Rng rng(seed);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t label = i % 2;
    const double cx = label == 0 ? -1.0 : 1.0;
    const double cy = label == 0 ? -1.0 : 1.0;
    ds.images(i, 0, 0, 0) = cx + spread * rng.gaussian();
    ds.images(i, 1, 0, 0) = cy + spread * rng.gaussian();
    ds.labels.push_back(label);
  }
  return ds;
}

// classic perceptron algorithm; returns true when it finds a separating
// hyperplane (guaranteed for linearly separable data)
bool perceptron_separates(const Dataset& ds, int max_passes) {
  double w0 = 0.0, w1 = 0.0, b = 0.0;
  const std::int64_t n = ds.images.dim(0);
  for (int pass = 0; pass < max_passes; ++pass) {
    bool clean = true;
    for (std::int64_t i = 0; i < n; ++i) {
      const double x0 = ds.images(i, 0, 0, 0), x1 = ds.images(i, 1, 0, 0);
      const double y = ds.labels[static_cast<std::size_t>(i)] == 0 ? -1.0 : 1.0;
      if (y * (w0 * x0 + w1 * x1 + b) <= 0.0) {
        w0 += y * x0;
        w1 += y * x1;
        b += y;
        clean = false;
      }
    }
    if (clean) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("sgd config validation accepts lr zero but rejects bad ranges") {
  SgdConfig ok;
  REQUIRE_NOTHROW(ok.validate());
  SgdConfig zero_lr;
  zero_lr.lr = 0.0;
  REQUIRE_NOTHROW(zero_lr.validate());

  SgdConfig bad = ok;
  bad.momentum = 1.0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.momentum = -0.1;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.lr = -0.001;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.weight_decay = -1.0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.batch_size = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.epochs = -1;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
  bad = ok;
  bad.topk = 0;
  REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("sgd_step: momentum 0, decay 0 is the plain update w - lr*g") {
  ParamStore params;
  params.values.emplace("w", Tensor({2}, {1.0, 2.0}));
  std::map<std::string, Tensor> grads;
  grads.emplace("w", Tensor({2}, {0.5, -0.25}));
  SgdConfig cfg;
  cfg.lr = 0.5;  // dyadic, so the arithmetic below is exact
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  sgd_step(params, grads, cfg);
  REQUIRE(params.at("w")[0] == 1.0 - 0.5 * 0.5);
  REQUIRE(params.at("w")[1] == 2.0 + 0.5 * 0.25);
  // velocity equals the raw gradient after one step
  REQUIRE(params.velocity.at("w")[0] == 0.5);
  REQUIRE(params.velocity.at("w")[1] == -0.25);

  std::map<std::string, Tensor> bad;
  bad.emplace("w", Tensor({3}, {0.0, 0.0, 0.0}));
  REQUIRE_THROWS_AS(sgd_step(params, bad, cfg), ShapeError);
}

TEST_CASE("sgd_step: quadratic bowl contracts to |w| < 1e-6 within 200 steps") {
  // loss = w^2/2 so grad = w and each plain step multiplies w by (1 - lr)
  ParamStore params;
  params.values.emplace("w", Tensor({1}, {1.0}));
  SgdConfig cfg;
  cfg.lr = 0.1;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  double expected = 1.0;
  for (int k = 0; k < 200; ++k) {
    std::map<std::string, Tensor> grads;
    grads.emplace("w", params.at("w"));
    sgd_step(params, grads, cfg);
    expected *= 0.9;  // closed-form contraction oracle
    REQUIRE(std::fabs(params.at("w")[0] - expected) <=
            1e-12 * std::max(1.0, std::fabs(expected)));
  }
  REQUIRE(std::fabs(params.at("w")[0]) < 1e-6);
}

TEST_CASE("sgd_step: lr multiplier moves matched tensors exactly 10x farther") {
  ParamStore params;
  params.values.emplace("head.w", Tensor({1}, {1.0}));
  params.values.emplace("body.w", Tensor({1}, {1.0}));
  std::map<std::string, Tensor> grads;
  grads.emplace("head.w", Tensor({1}, {0.25}));
  grads.emplace("body.w", Tensor({1}, {0.25}));
  SgdConfig cfg;
  cfg.lr = 0.0078125;  // 2^-7, dyadic so 10x is exact
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.lr_multipliers = {{"head.*", 10.0}};
  sgd_step(params, grads, cfg);
  const double dh = 1.0 - params.at("head.w")[0];
  const double db = 1.0 - params.at("body.w")[0];
  REQUIRE(dh == 10.0 * db);
  REQUIRE(db == 0.0078125 * 0.25);

  // pattern semantics: prefix match needs the '*', exact names also work,
  // first match wins
  SgdConfig pat;
  pat.lr_multipliers = {{"head.*", 10.0}, {"body.w", 3.0}, {"body.*", 7.0}};
  REQUIRE(pat.lr_multiplier("head.w") == 10.0);
  REQUIRE(pat.lr_multiplier("head.b") == 10.0);
  REQUIRE(pat.lr_multiplier("heads.w") == 1.0);
  REQUIRE(pat.lr_multiplier("body.w") == 3.0);
  REQUIRE(pat.lr_multiplier("body.b") == 7.0);
  REQUIRE(pat.lr_multiplier("stem.w") == 1.0);
}

TEST_CASE("weight decay alone shrinks parameters geometrically (exact at momentum 0)") {
  // dyadic lr and wd keep every step exactly representable: the factor is
  // 1 - 0.5*0.5 = 0.75 per step
  ParamStore params;
  params.values.emplace("w", Tensor({3}, {1.0, -2.0, 0.5}));
  const Tensor w0 = params.at("w");
  SgdConfig cfg;
  cfg.lr = 0.5;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.5;
  std::map<std::string, Tensor> zero_grads;
  zero_grads.emplace("w", Tensor::zeros({3}));
  double factor = 1.0;
  for (int k = 1; k <= 20; ++k) {
    sgd_step(params, zero_grads, cfg);
    factor *= 0.75;
    for (std::int64_t i = 0; i < 3; ++i) REQUIRE(params.at("w")[i] == w0[i] * factor);
  }
}

TEST_CASE("train: separable blobs reach zero training error within 50 epochs") {
  Dataset blobs = make_blobs(20, 0.3, 123);
  // independent separability certificate
  REQUIRE(perceptron_separates(blobs, 10000));

  ArchSpec spec = make_linear_net(2, 1, 1, 2);
  SgdConfig cfg;
  cfg.batch_size = 8;
  cfg.lr = 0.5;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  cfg.epochs = 50;
  cfg.topk = 1;
  TrainResult r = train(spec, blobs, cfg, Rng(7));
  double best = 1.0;
  for (const EpochRow& row : r.metrics.rows) best = std::min(best, row.top1);
  REQUIRE(best == 0.0);
}

TEST_CASE("train: lr 0 leaves every parameter bit-exact") {
  SyntheticConfig sc;
  sc.classes = 2;
  sc.per_class = 8;
  sc.size = 12;
  sc.seed = 4;
  Dataset ds = gen_synthetic(sc);
  ArchSpec spec = make_tiny_conv_net(1, 12, 2);
  InitPolicy init;
  init.stddev = 0.1;
  ParamStore start = init_params(spec, init, Rng(5));
  SgdConfig cfg;
  cfg.batch_size = 8;
  cfg.lr = 0.0;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0005;
  cfg.epochs = 3;
  cfg.topk = 1;
  TrainResult r = train(spec, ds, cfg, Rng(6), nullptr, nullptr, &start);
  REQUIRE(r.metrics.rows.size() == 3);
  for (const auto& [name, t] : start.values) REQUIRE(r.params.at(name) == t);
}

TEST_CASE("train: fixed seed replays bit-identically, different seed does not") {
  SyntheticConfig sc;
  sc.classes = 2;
  sc.per_class = 10;
  sc.size = 12;
  sc.seed = 8;
  Dataset ds = gen_synthetic(sc);
  ArchSpec spec = make_tiny_conv_net(1, 12, 2);
  SgdConfig cfg;
  cfg.batch_size = 5;
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0005;
  cfg.epochs = 3;
  cfg.topk = 1;
  InitPolicy init;
  init.stddev = 0.1;
  ParamStore start = init_params(spec, init, Rng(11));

  TrainResult a = train(spec, ds, cfg, Rng(42), nullptr, nullptr, &start);
  TrainResult b = train(spec, ds, cfg, Rng(42), nullptr, nullptr, &start);
  REQUIRE(a.metrics.rows.size() == b.metrics.rows.size());
  for (std::size_t i = 0; i < a.metrics.rows.size(); ++i) {
    REQUIRE(a.metrics.rows[i].train_loss == b.metrics.rows[i].train_loss);
    REQUIRE(a.metrics.rows[i].test_loss == b.metrics.rows[i].test_loss);
    REQUIRE(a.metrics.rows[i].top1 == b.metrics.rows[i].top1);
    REQUIRE(a.metrics.rows[i].topk == b.metrics.rows[i].topk);
  }
  for (const auto& [name, t] : a.params.values) REQUIRE(b.params.at(name) == t);

  TrainResult c = train(spec, ds, cfg, Rng(43), nullptr, nullptr, &start);
  bool differs = false;
  for (std::size_t i = 0; i < a.metrics.rows.size() && !differs; ++i)
    differs = a.metrics.rows[i].train_loss != c.metrics.rows[i].train_loss;
  REQUIRE(differs);
}

TEST_CASE("train: exploding loss aborts with a divergence diagnostic") {
  SyntheticConfig sc;
  sc.classes = 2;
  sc.per_class = 8;
  sc.size = 12;
  sc.seed = 4;
  Dataset ds = gen_synthetic(sc);
  ArchSpec spec = make_tiny_conv_net(1, 12, 2);
  SgdConfig cfg;
  cfg.batch_size = 8;
  cfg.lr = 1e6;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  cfg.epochs = 3;
  cfg.topk = 1;
  InitPolicy init;
  init.stddev = 0.1;
  ParamStore start = init_params(spec, init, Rng(5));
  try {
    train(spec, ds, cfg, Rng(6), nullptr, nullptr, &start);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    REQUIRE(std::string(e.what()).find("epoch") != std::string::npos);
  }
}

TEST_CASE("train: batch larger than the dataset is rejected") {
  Dataset blobs = make_blobs(3, 0.3, 1);
  ArchSpec spec = make_linear_net(2, 1, 1, 2);
  SgdConfig cfg;
  cfg.batch_size = 7;
  cfg.epochs = 1;
  REQUIRE_THROWS_AS(train(spec, blobs, cfg, Rng(1)), ValueError);
}

TEST_CASE("evaluate: constant logits give top-1 error 1 - 1/K via lowest-index ties") {
  const std::int64_t k = 4, n = 40;
  ArchSpec spec = make_linear_net(1, 3, 3, k);
  ParamStore zero = init_params(spec, InitPolicy{InitPolicy::Kind::zero}, Rng(1));
  Dataset ds;
  ds.num_classes = k;
  ds.images = Tensor({n, 1, 3, 3});
  Rng rng(2);
  for (std::int64_t i = 0; i < n; ++i) {
    put_sample(ds.images, i, ckt::random_tensor({1, 3, 3}, rng, 0.0, 1.0));
    ds.labels.push_back(i % k);  // balanced
  }
  EvalResult r = evaluate(spec, zero, ds, EvalMode::single, 2);
  REQUIRE(r.top1 == 1.0 - 1.0 / static_cast<double>(k));
  // all predictions are class 0, so a label-0 dataset scores perfectly
  Dataset zeros_ds = ds;
  std::fill(zeros_ds.labels.begin(), zeros_ds.labels.end(), 0);
  REQUIRE(evaluate(spec, zero, zeros_ds, EvalMode::single, 2).top1 == 0.0);
  // with uniform probabilities the true label ranks at its own index, so
  // top-k error is the fraction of labels >= k'
  REQUIRE(evaluate(spec, zero, ds, EvalMode::single, 4).topk == 0.0);
}

TEST_CASE("evaluate: top-k error is non-increasing in k") {
  const std::int64_t k = 6;
  ArchSpec spec = make_linear_net(1, 4, 4, k);
  InitPolicy init;
  init.stddev = 0.3;
  ParamStore params = init_params(spec, init, Rng(9));
  Dataset ds;
  ds.num_classes = k;
  ds.images = Tensor({30, 1, 4, 4});
  Rng rng(10);
  for (std::int64_t i = 0; i < 30; ++i) {
    put_sample(ds.images, i, ckt::random_tensor({1, 4, 4}, rng, 0.0, 1.0));
    ds.labels.push_back(i % k);
  }
  double prev = 1.0;
  for (std::int64_t kk = 1; kk <= k; ++kk) {
    const double err = evaluate(spec, params, ds, EvalMode::single, kk).topk;
    REQUIRE(err <= prev);
    prev = err;
  }
  REQUIRE(prev == 0.0);  // top-K over all K classes can never miss
}

TEST_CASE("evaluate: ten-crop equals single center crop on constant images") {
  // constant input makes every crop and reflection identical, so the
  // translation-invariant (conv -> gap) pipeline must agree with the single
  // center crop to rounding
  ArchSpec spec = make_tiny_conv_net(1, 8, 2);
  InitPolicy init;
  init.stddev = 0.1;
  ParamStore params = init_params(spec, init, Rng(3));
  Dataset ds;
  ds.num_classes = 2;
  ds.images = Tensor::full({2, 1, 12, 12}, 0.37);
  ds.labels = {0, 1};
  EvalResult single = evaluate(spec, params, ds, EvalMode::single, 1);
  EvalResult ten = evaluate(spec, params, ds, EvalMode::ten_crop, 1);
  REQUIRE(std::fabs(single.loss - ten.loss) < 1e-12);
  REQUIRE(single.top1 == ten.top1);
  REQUIRE(single.topk == ten.topk);
}

TEST_CASE("evaluate: ten-crop averages softmaxes, not logits (hand oracle)") {
  // source images equal the crop size, so the ten crops collapse to five
  // copies of the image plus five of its horizontal reflection — a 2-crop
  // average computable by hand
  ArchSpec spec = make_linear_net(1, 2, 2, 2);
  ParamStore params = init_params(spec, InitPolicy{InitPolicy::Kind::zero}, Rng(1));
  // logit0 reads pixel (0,0); logit1 reads 2x pixel (1,0)
  params.at("f1.w")(0, 0) = 1.0;
  params.at("f1.w")(2, 1) = 2.0;

  // picked so the two crops' softmaxes sit on opposite sides of 0.5: the
  // Jensen gap between mean-of-softmax and softmax-of-mean is then large
  const double a = 3.0, b = -2.0, c = 0.0, d = 0.0;
  Dataset ds;
  ds.num_classes = 2;
  ds.images = Tensor({1, 1, 2, 2});
  ds.images(0, 0, 0, 0) = a;
  ds.images(0, 0, 0, 1) = b;
  ds.images(0, 0, 1, 0) = c;
  ds.images(0, 0, 1, 1) = d;
  ds.labels = {0};

  // hand arithmetic: image logits (a, 2c); reflected logits (b, 2d)
  const double p_img = std::exp(a) / (std::exp(a) + std::exp(2.0 * c));
  const double p_ref = std::exp(b) / (std::exp(b) + std::exp(2.0 * d));
  const double p_mean_softmax = 0.5 * (p_img + p_ref);
  // the wrong order: softmax of the averaged logits
  const double la = 0.5 * (a + b), lb = 0.5 * (2.0 * c + 2.0 * d);
  const double p_softmax_mean = std::exp(la) / (std::exp(la) + std::exp(lb));

  EvalResult r = evaluate(spec, params, ds, EvalMode::ten_crop, 1);
  REQUIRE(std::fabs(r.loss - (-std::log(p_mean_softmax))) < 1e-12);
  REQUIRE(std::fabs(p_mean_softmax - p_softmax_mean) > 1e-3);  // orders differ here
  REQUIRE(std::fabs(r.loss - (-std::log(p_softmax_mean))) > 1e-3);
}

TEST_CASE("one tiny-lr step along the negative gradient lowers the batch loss") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    ArchSpec spec = make_tiny_conv_net(1, 8, 3);
    InitPolicy init;
    init.stddev = 0.1;
    ParamStore params = init_params(spec, init, Rng(seed));
    Rng rng(seed + 100);
    Tensor batch = ckt::random_tensor({4, 1, 8, 8}, rng, 0.0, 1.0);
    std::vector<std::int64_t> labels = {0, 1, 2, 0};

    ExecOptions opts;
    opts.labels = &labels;
    ExecResult r0 = run_graph(spec, params, batch, opts);
    const double loss0 = r0.loss_value();
    r0.tape.backward(r0.loss);
    std::map<std::string, Tensor> grads;
    for (const auto& [name, shape] : param_inventory(spec))
      grads.emplace(name, r0.tape.grad(r0.param_of.at(name)));
    SgdConfig cfg;
    cfg.lr = 1e-6;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    sgd_step(params, grads, cfg);
    ExecResult r1 = run_graph(spec, params, batch, opts);
    REQUIRE(r1.loss_value() <= loss0 + 1e-12);
  }
}

TEST_CASE("metrics render as CSV and log lines") {
  Metrics m;
  m.rows.push_back({0, 0.7, 0.71, 0.5, 0.25});
  m.rows.push_back({1, 0.6, 0.62, 0.4, 0.2});
  const std::string csv = m.csv();
  REQUIRE(csv.rfind("epoch,train_loss,test_loss,top1,topk\n", 0) == 0);
  std::regex row_re(R"(\d+,[0-9.+\-eE]+,[0-9.+\-eE]+,[0-9.+\-eE]+,[0-9.+\-eE]+)");
  std::size_t rows = 0;
  for (auto it = std::sregex_iterator(csv.begin(), csv.end(), row_re);
       it != std::sregex_iterator(); ++it)
    ++rows;
  REQUIRE(rows == 2);
  REQUIRE(m.log_lines().find("epoch 0:") != std::string::npos);
  REQUIRE(m.log_lines().find("top1 50.00%") != std::string::npos);
}

TEST_CASE("train: per-sample augmentation hook is deterministic and shape-checked") {
  SyntheticConfig sc;
  sc.classes = 2;
  sc.per_class = 8;
  sc.size = 12;
  sc.seed = 14;
  Dataset ds = gen_synthetic(sc);
  ArchSpec spec = make_tiny_conv_net(1, 8, 2);  // expects 8x8 inputs
  CropPolicy policy;
  policy.s_src = 12;
  policy.s_crop = 8;
  AugmentFn aug = [&policy](const Tensor& img, Rng& rng) {
    return random_crop_flip(img, policy, rng);
  };
  SgdConfig cfg;
  cfg.batch_size = 8;
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  cfg.epochs = 2;
  cfg.topk = 1;
  InitPolicy init;
  init.stddev = 0.1;
  ParamStore start = init_params(spec, init, Rng(15));
  // note: evaluation center-crops the stored 12x12 images down to 8x8
  TrainResult a = train(spec, ds, cfg, Rng(16), nullptr, aug, &start);
  TrainResult b = train(spec, ds, cfg, Rng(16), nullptr, aug, &start);
  for (std::size_t i = 0; i < a.metrics.rows.size(); ++i)
    REQUIRE(a.metrics.rows[i].train_loss == b.metrics.rows[i].train_loss);

  AugmentFn bad = [](const Tensor& img, Rng&) { return img; };  // stays 12x12
  REQUIRE_THROWS_AS(train(spec, ds, cfg, Rng(16), nullptr, bad, &start), ShapeError);
}

TEST_CASE("desk calibration: small CNN beats 95% test accuracy, linear probe stays short") {
  // disk-vs-square at size 28 with 500 per class, split 800 train / 200 test
  SyntheticConfig sc;
  sc.classes = 2;
  sc.per_class = 500;
  sc.size = 28;
  sc.seed = 11;
  sc.noise = 0.1;
  Dataset full = gen_synthetic(sc);
  Dataset tr = slice_dataset(full, 0, 800);
  Dataset te = slice_dataset(full, 800, 200);

  ArchSpec net = make_act_net(ActKind::relu, 1, 28, 2, 8);
  SgdConfig cfg;
  cfg.batch_size = 32;
  cfg.lr = 0.1;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0005;
  cfg.epochs = 20;
  cfg.topk = 1;
  InitPolicy init;
  init.stddev = 0.1;
  Rng rng(3);
  ParamStore start = init_params(net, init, rng);
  TrainResult r = train(net, tr, cfg, rng, &te, nullptr, &start);
  double best = 1.0;
  for (const EpochRow& row : r.metrics.rows) best = std::min(best, row.top1);
  REQUIRE(best <= 0.05);  // >= 95% test accuracy within 20 epochs

  // a logistic probe on raw pixels cannot fit the training set perfectly
  ArchSpec probe = make_linear_net(1, 28, 28, 2);
  SgdConfig pcfg;
  pcfg.batch_size = 32;
  pcfg.lr = 0.05;
  pcfg.momentum = 0.9;
  pcfg.weight_decay = 0.0;
  pcfg.epochs = 40;
  pcfg.topk = 1;
  TrainResult pr = train(probe, tr, pcfg, Rng(3));
  double probe_best = 1.0;
  for (const EpochRow& row : pr.metrics.rows) probe_best = std::min(probe_best, row.top1);
  REQUIRE(probe_best > 0.0);  // below 100% train accuracy throughout
}

TEST_CASE("compare_activations: deterministic, well-formed reports") {
  // ordering claim (relu <= tanh, 5-seed median) runs in the acceptance
  // suite at desk scale; here the harness contract is checked cheaply
  SyntheticConfig sc;
  sc.classes = 2;
  sc.per_class = 15;
  sc.size = 12;
  sc.seed = 5;
  Dataset ds = gen_synthetic(sc);
  SgdConfig cfg;
  cfg.batch_size = 10;
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  cfg.epochs = 3;
  cfg.topk = 1;
  ActivationReport a = compare_activations(ds, cfg, 3, 0.3, 0.25, 2, 50);
  ActivationReport b = compare_activations(ds, cfg, 3, 0.3, 0.25, 2, 50);
  REQUIRE(a.seeds.size() == 2);
  for (std::size_t s = 0; s < a.seeds.size(); ++s) {
    REQUIRE(a.seeds[s].relu_train_err.size() == 3);  // both curves present
    REQUIRE(a.seeds[s].tanh_train_err.size() == 3);
    REQUIRE(a.seeds[s].relu_train_err == b.seeds[s].relu_train_err);  // identical
    REQUIRE(a.seeds[s].tanh_train_err == b.seeds[s].tanh_train_err);
    REQUIRE(a.seeds[s].relu_epochs_to_threshold >= 1);
    REQUIRE(a.seeds[s].relu_epochs_to_threshold <= 3);
  }
  REQUIRE(a.relu_median_epochs == b.relu_median_epochs);
  REQUIRE(a.tanh_median_epochs == b.tanh_median_epochs);
}

TEST_CASE("compare_depth: matched budgets, zero-init sanity row, shallow control") {
  // the plain and residual twins must cost identical parameter budgets at
  // every depth (identity shortcuts are free and all convs are 3x3)
  for (std::int64_t depth : {4, 5, 20, 21}) {
    ArchSpec p = make_plain_stack(depth, 1, 12, 2, 3);
    ArchSpec r = make_residual_stack(depth, 1, 12, 2, 3);
    AnalyzeReport ap = analyze(p);
    AnalyzeReport ar = analyze(r);
    REQUIRE(ap.total_params == ar.total_params);
    REQUIRE(ap.param_depth == depth + 1);  // convs plus the dense head
    REQUIRE(ar.param_depth == depth + 1);
  }
  REQUIRE_THROWS_AS(make_plain_stack(2, 1, 12, 2, 3), ValueError);
  REQUIRE_THROWS_AS(make_residual_stack(2, 1, 12, 2, 3), ValueError);

  // depth-4 control: report-only, no ordering asserted (the depth-20
  // ordering claim runs in the acceptance suite at desk scale)
  SyntheticConfig sc;
  sc.classes = 2;
  sc.per_class = 10;
  sc.size = 12;
  sc.seed = 9;
  Dataset ds = gen_synthetic(sc);
  SgdConfig cfg;
  cfg.batch_size = 10;
  cfg.lr = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.0;
  cfg.epochs = 2;
  cfg.topk = 1;
  DepthReport rep = compare_depth(ds, cfg, 4, 3, 0.1, 2, 31);
  REQUIRE(rep.depth == 4);
  REQUIRE(rep.seeds.size() == 2);
  for (const DepthSeedRow& row : rep.seeds) {
    REQUIRE(std::isfinite(row.plain_final_loss));
    REQUIRE(std::isfinite(row.residual_final_loss));
  }
  // a residual net with zeroed inner blocks is exactly its stem+head network
  REQUIRE(rep.zero_init_initial_loss == rep.identity_baseline_loss);
}

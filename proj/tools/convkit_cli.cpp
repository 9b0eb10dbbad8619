// convkit — command-line front end for the library: training, evaluation,
// feature extraction, the transfer experiment, fine-tuning, spec analysis,
// gradient checking, augmentation preview, and synthetic data generation.
//
// Exit codes: 0 success, 2 configuration error, 3 data/I-O error,
// 4 training divergence. Gradient-check failures exit 1.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "convkit/archspec.hpp"
#include "convkit/augment.hpp"
#include "convkit/config.hpp"
#include "convkit/dataio.hpp"
#include "convkit/error.hpp"
#include "convkit/exec.hpp"
#include "convkit/experiments.hpp"
#include "convkit/gradcheck.hpp"
#include "convkit/params.hpp"
#include "convkit/rng.hpp"
#include "convkit/svm.hpp"
#include "convkit/tensor.hpp"
#include "convkit/train.hpp"
#include "convkit/transfer.hpp"

namespace {

using namespace convkit;

struct GlobalArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out = "run";
  int threads = 1;
  std::string format = "text";
  bool force = false;
  std::vector<std::string> sets;
};

RunConfig resolve_config(const GlobalArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = load_run_config(args.config_path);
  for (const std::string& kv : args.sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  return cfg;
}

// Writing commands claim their --out directory up front and echo the
// resolved configuration into it for reproducibility.
void prepare_out_dir(const GlobalArgs& args, const RunConfig& cfg) {
  const std::filesystem::path dir(args.out);
  if (std::filesystem::exists(dir) && !std::filesystem::is_empty(dir) && !args.force)
    throw ConfigError("output directory '" + args.out +
                      "' exists and is not empty (pass --force to reuse it)");
  std::filesystem::create_directories(dir);
  std::ofstream echo(dir / "config.txt", std::ios::binary);
  if (!echo) throw IoError("cannot write '" + (dir / "config.txt").string() + "'");
  echo << cfg.render();
}

void write_text(const GlobalArgs& args, const std::string& name, const std::string& text) {
  const std::filesystem::path path = std::filesystem::path(args.out) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

std::string out_path(const GlobalArgs& args, const std::string& name) {
  return (std::filesystem::path(args.out) / name).string();
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

ArchSpec load_model_spec(const RunConfig& cfg) {
  const std::string path = cfg.str("model.spec");
  if (path.empty()) throw ConfigError("model.spec is required (path to a .spec file)");
  const std::string stem = std::filesystem::path(path).stem().string();
  return parse_archspec(read_text_file(path), stem);
}

// Dataset from [train]: either a generated synthetic set (with an optional
// held-out slice) or an IDX image/label pair from disk.
struct LoadedData {
  Dataset train;
  std::optional<Dataset> test;
};

LoadedData load_train_data(const RunConfig& cfg) {
  LoadedData data;
  if (cfg.flag("train.synthetic", false)) {
    SyntheticConfig syn;
    syn.classes = cfg.i64("train.classes", 4);
    const std::int64_t per = cfg.i64("train.per_class", 100);
    const std::int64_t holdout = cfg.i64("train.holdout_per_class", 0);
    syn.per_class = per + holdout;
    syn.size = cfg.i64("train.size", 28);
    syn.seed = cfg.u64("train.data_seed", 11);
    syn.noise = cfg.f64("train.noise", 0.1);
    const Dataset all = gen_synthetic(syn);
    // generated labels interleave as i % classes, so contiguous slices stay
    // class-balanced
    data.train = slice_dataset(all, 0, syn.classes * per);
    if (holdout > 0)
      data.test = slice_dataset(all, syn.classes * per, syn.classes * holdout);
    return data;
  }

  const std::string images = cfg.str("train.images");
  const std::string labels = cfg.str("train.labels");
  if (images.empty() || labels.empty())
    throw ConfigError("train.images and train.labels are required unless train.synthetic=1");
  data.train.images = load_idx_images(images);
  data.train.labels = load_idx_labels(labels);
  if (data.train.images.dim(0) != static_cast<std::int64_t>(data.train.labels.size()))
    throw DataError("dataset mismatch: " + std::to_string(data.train.images.dim(0)) +
                    " images in '" + images + "' but " +
                    std::to_string(data.train.labels.size()) + " labels in '" + labels + "'");
  std::int64_t classes = 0;
  for (std::int64_t l : data.train.labels) classes = std::max(classes, l + 1);
  data.train.num_classes = cfg.i64("train.classes", classes);

  const std::string test_images = cfg.str("train.test_images");
  const std::string test_labels = cfg.str("train.test_labels");
  if (!test_images.empty() || !test_labels.empty()) {
    if (test_images.empty() || test_labels.empty())
      throw ConfigError("train.test_images and train.test_labels must be set together");
    Dataset test;
    test.images = load_idx_images(test_images);
    test.labels = load_idx_labels(test_labels);
    test.num_classes = data.train.num_classes;
    if (test.images.dim(0) != static_cast<std::int64_t>(test.labels.size()))
      throw DataError("dataset mismatch between '" + test_images + "' and '" + test_labels +
                      "'");
    data.test = std::move(test);
  }
  return data;
}

SgdConfig sgd_from_config(const RunConfig& cfg) {
  SgdConfig sgd;
  sgd.batch_size = cfg.i64("train.batch_size", 32);
  sgd.lr = cfg.f64("train.lr", 0.01);
  sgd.momentum = cfg.f64("train.momentum", 0.9);
  sgd.weight_decay = cfg.f64("train.weight_decay", 5e-4);
  sgd.epochs = cfg.i64("train.epochs", 10);
  sgd.topk = cfg.i64("train.topk", 1);
  sgd.validate();
  return sgd;
}

EvalMode eval_mode_from(const std::string& name) {
  if (name == "single") return EvalMode::single;
  if (name == "ten-crop") return EvalMode::ten_crop;
  throw ConfigError("eval mode must be 'single' or 'ten-crop', got '" + name + "'");
}

// Training-time augmentation chain: scale jitter, then random crop + flip to
// the model's input plane, then PCA color jitter (3-channel inputs only).
AugmentFn build_augment(const RunConfig& cfg, const ArchSpec& spec, const Dataset& train) {
  if (!cfg.flag("augment.enabled", false)) return nullptr;

  const std::int64_t s_min = cfg.i64("augment.scale_min", 0);
  const std::int64_t s_max = cfg.i64("augment.scale_max", s_min);
  const std::int64_t s_crop = cfg.i64("augment.crop", spec.in_h);
  const bool flip = cfg.flag("augment.flip", true);
  const bool pca = cfg.flag("augment.pca", false);
  if (s_crop != spec.in_h || spec.in_h != spec.in_w)
    throw ConfigError("augment.crop must equal the model's square input size " +
                      std::to_string(spec.in_h));

  std::optional<PcaColorModel> pca_model;
  if (pca) {
    if (train.images.dim(1) != 3)
      throw ConfigError("augment.pca=1 needs 3-channel training images");
    std::vector<Tensor> imgs;
    const std::int64_t n = std::min<std::int64_t>(train.images.dim(0), 64);
    for (std::int64_t i = 0; i < n; ++i) imgs.push_back(get_sample(train.images, i));
    Rng prng(cfg.u64("train.data_seed", 11), 99);
    PcaColorModel model = fit_pca_color(sample_pixels(imgs, prng));
    model.alpha_std = cfg.f64("augment.pca_scale", 0.1);
    pca_model = model;
  }

  return [s_min, s_max, s_crop, flip, pca_model](const Tensor& img, Rng& rng) {
    Tensor work = img;
    if (s_min > 0) {
      ScaleJitterPolicy jitter;
      jitter.s_min = s_min;
      jitter.s_max = s_max;
      work = scale_jitter(work, jitter, rng);
    }
    CropPolicy policy;
    policy.s_src = std::max(work.dim(1), work.dim(2));
    policy.s_crop = s_crop;
    policy.flip = flip;
    work = random_crop_flip(work, policy, rng);
    if (pca_model) work = apply_pca_color(work, *pca_model, rng);
    return work;
  };
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_train(const GlobalArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const ArchSpec spec = load_model_spec(cfg);
  const LoadedData data = load_train_data(cfg);
  const SgdConfig sgd = sgd_from_config(cfg);
  const EvalMode mode = eval_mode_from(cfg.str("train.eval_mode", "single"));
  const AugmentFn augment = build_augment(cfg, spec, data.train);
  prepare_out_dir(args, cfg);

  InitPolicy policy;
  policy.stddev = cfg.f64("train.init_stddev", 0.1);
  const Rng base(args.seed);
  const ParamStore init = init_params(spec, policy, base.fork(1));
  const TrainResult res = train(spec, data.train, sgd, base.fork(2),
                                data.test ? &*data.test : nullptr, augment, &init, mode);

  write_text(args, "metrics.csv", res.metrics.csv());
  save_checkpoint(out_path(args, "model.ckpt"), codebook_checkpoint(spec, res.params));
  if (args.format == "csv")
    std::cout << res.metrics.csv();
  else
    std::cout << res.metrics.log_lines();
  std::cout << "wrote " << out_path(args, "metrics.csv") << " and "
            << out_path(args, "model.ckpt") << "\n";
  return 0;
}

int cmd_eval(const GlobalArgs& args, const std::string& checkpoint, const std::string& mode) {
  const RunConfig cfg = resolve_config(args);
  const ArchSpec spec = load_model_spec(cfg);
  const LoadedData data = load_train_data(cfg);
  const Dataset& ds = data.test ? *data.test : data.train;

  const Checkpoint ckpt =
      load_checkpoint(checkpoint, spec_text_hash(render_archspec(spec)), args.force);
  ParamStore params;
  params.values = ckpt.tensors;

  const EvalMode eval_mode = eval_mode_from(mode);
  const EvalResult res =
      evaluate(spec, params, ds, eval_mode, cfg.i64("train.topk", 1));

  char row[160];
  std::snprintf(row, sizeof(row), "%s,%.6f,%.6f,%.6f\n", mode.c_str(), res.loss, res.top1,
                res.topk);
  if (args.format == "csv")
    std::cout << "mode,loss,top1,topk\n" << row;
  else
    std::printf("mode %s  loss %.6f  top1-err %.4f  topk-err %.4f\n", mode.c_str(), res.loss,
                res.top1, res.topk);
  return 0;
}

int cmd_extract(const GlobalArgs& args, const std::string& checkpoint, const std::string& tap,
                const std::string& rule) {
  const RunConfig cfg = resolve_config(args);
  const ArchSpec spec = load_model_spec(cfg);
  const LoadedData data = load_train_data(cfg);
  prepare_out_dir(args, cfg);

  const Checkpoint ckpt =
      load_checkpoint(checkpoint, spec_text_hash(render_archspec(spec)), args.force);
  ParamStore params;
  params.values = ckpt.tensors;

  TapPoint point;
  point.node = tap;
  if (rule == "flatten")
    point.rule = FlattenRule::flatten;
  else if (rule == "gap")
    point.rule = FlattenRule::gap;
  else
    throw ConfigError("--rule must be 'flatten' or 'gap', got '" + rule + "'");

  const Tensor feats = extract_features(spec, params, point, data.train.images);
  std::string csv = "label";
  for (std::int64_t j = 0; j < feats.dim(1); ++j) csv += ",f" + std::to_string(j);
  csv += "\n";
  char num[32];
  for (std::int64_t i = 0; i < feats.dim(0); ++i) {
    csv += std::to_string(data.train.labels[static_cast<std::size_t>(i)]);
    for (std::int64_t j = 0; j < feats.dim(1); ++j) {
      std::snprintf(num, sizeof(num), ",%.17g", feats(i, j));
      csv += num;
    }
    csv += "\n";
  }
  write_text(args, "features.csv", csv);
  std::cout << "extracted " << feats.dim(0) << " rows x " << feats.dim(1) << " features at '"
            << tap << "' (" << rule << ") -> " << out_path(args, "features.csv") << "\n";
  return 0;
}

TransferConfig transfer_from_config(const RunConfig& cfg, const GlobalArgs& args) {
  TransferConfig tc;
  tc.size = cfg.i64("transfer.size", tc.size);
  tc.width = cfg.i64("transfer.width", tc.width);
  tc.source_per_class = cfg.i64("transfer.source_per_class", tc.source_per_class);
  tc.target_per_class = cfg.i64("transfer.target_per_class", tc.target_per_class);
  tc.noise = cfg.f64("transfer.noise", tc.noise);
  tc.data_seed = cfg.u64("transfer.data_seed", tc.data_seed);
  tc.folds = static_cast<int>(cfg.i64("transfer.folds", tc.folds));
  tc.source_classes = cfg.i64_list("transfer.source_classes", tc.source_classes);
  tc.target_classes = cfg.i64_list("transfer.target_classes", tc.target_classes);
  tc.positive_classes = cfg.i64_list("transfer.positive_classes", tc.positive_classes);
  tc.init_stddev = cfg.f64("transfer.init_stddev", tc.init_stddev);
  tc.svm_c_grid = cfg.f64_list("svm.c_grid", {});
  tc.svm_gamma_grid = cfg.f64_list("svm.gamma_grid", {});
  tc.source_cfg.epochs = cfg.i64("transfer.source_epochs", tc.source_cfg.epochs);
  tc.source_cfg.batch_size = cfg.i64("transfer.source_batch_size", tc.source_cfg.batch_size);
  tc.source_cfg.lr = cfg.f64("transfer.source_lr", tc.source_cfg.lr);
  tc.source_cfg.momentum = cfg.f64("transfer.source_momentum", tc.source_cfg.momentum);
  tc.source_cfg.weight_decay =
      cfg.f64("transfer.source_weight_decay", tc.source_cfg.weight_decay);
  tc.tune_cfg.epochs = cfg.i64("transfer.tune_epochs", tc.tune_cfg.epochs);
  tc.tune_cfg.batch_size = cfg.i64("transfer.tune_batch_size", tc.tune_cfg.batch_size);
  tc.tune_cfg.lr = cfg.f64("transfer.tune_lr", tc.tune_cfg.lr);
  tc.tune_cfg.momentum = cfg.f64("transfer.tune_momentum", tc.tune_cfg.momentum);
  tc.tune_cfg.weight_decay = cfg.f64("transfer.tune_weight_decay", tc.tune_cfg.weight_decay);
  tc.plan.replace = cfg.str_list("transfer.replace", tc.plan.replace);
  tc.plan.init_stddev = cfg.f64("transfer.replace_stddev", tc.plan.init_stddev);
  tc.plan.lr_multiplier = cfg.f64("transfer.replace_lr_multiplier", tc.plan.lr_multiplier);
  tc.seed = args.seed;
  return tc;
}

int cmd_transfer(const GlobalArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const TransferConfig tc = transfer_from_config(cfg, args);
  prepare_out_dir(args, cfg);

  const ArchSpec cb_spec = make_act_net(
      ActKind::relu, 1, tc.size, static_cast<std::int64_t>(tc.source_classes.size()), tc.width);

  std::optional<ParamStore> reused;
  const std::string ckpt_path = cfg.str("transfer.checkpoint");
  if (!ckpt_path.empty()) {
    const Checkpoint ckpt =
        load_checkpoint(ckpt_path, spec_text_hash(render_archspec(cb_spec)), args.force);
    ParamStore p;
    p.values = ckpt.tensors;
    reused = std::move(p);
    std::cout << "reusing source codebook from '" << ckpt_path << "' — skipping step 1\n";
  }

  ParamStore codebook_out;
  const TransferReport report =
      run_transfer_experiment(tc, reused ? &*reused : nullptr, &codebook_out);

  write_text(args, "transfer.csv", report.csv());
  if (!reused)
    save_checkpoint(out_path(args, "codebook.ckpt"),
                    codebook_checkpoint(cb_spec, codebook_out));

  if (args.format == "csv")
    std::cout << report.csv();
  else
    std::cout << report.table();
  if (!report.codebook_reused)
    std::printf("source codebook final train top1 error: %.4f\n", report.source_top1);
  std::printf("best tap: %s\n", report.best_tap.c_str());
  std::cout << "wrote " << out_path(args, "transfer.csv") << "\n";
  return 0;
}

int cmd_finetune(const GlobalArgs& args, const std::string& checkpoint) {
  const RunConfig cfg = resolve_config(args);
  const ArchSpec spec = load_model_spec(cfg);
  const LoadedData data = load_train_data(cfg);
  const SgdConfig sgd = sgd_from_config(cfg);
  const EvalMode mode = eval_mode_from(cfg.str("train.eval_mode", "single"));
  prepare_out_dir(args, cfg);

  // the codebook may come from a different (source) architecture, so the
  // spec hash is informational here; load with force to skip the check
  const Checkpoint ckpt = load_checkpoint(checkpoint, std::nullopt, true);
  ParamStore codebook;
  codebook.values = ckpt.tensors;

  FinetunePlan plan;
  plan.replace = cfg.str_list("transfer.replace", {"f1.*"});
  plan.init_stddev = cfg.f64("transfer.replace_stddev", plan.init_stddev);
  plan.lr_multiplier = cfg.f64("transfer.replace_lr_multiplier", plan.lr_multiplier);

  const Rng base(args.seed);
  const TrainResult res = finetune(spec, codebook, plan, data.train, sgd, base.fork(2),
                                   data.test ? &*data.test : nullptr, mode);

  write_text(args, "metrics.csv", res.metrics.csv());
  save_checkpoint(out_path(args, "model.ckpt"), codebook_checkpoint(spec, res.params));
  if (args.format == "csv")
    std::cout << res.metrics.csv();
  else
    std::cout << res.metrics.log_lines();
  std::cout << "wrote " << out_path(args, "metrics.csv") << " and "
            << out_path(args, "model.ckpt") << "\n";
  return 0;
}

std::string shape_x(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out;
}

int cmd_analyze(const GlobalArgs& args, const std::string& spec_path) {
  const std::string stem = std::filesystem::path(spec_path).stem().string();
  const ArchSpec spec = parse_archspec(read_text_file(spec_path), stem);
  const AnalyzeReport report = analyze(spec);

  if (args.format == "csv") {
    std::cout << "id,kind,out_shape,params,macs,rf,jump,depth\n";
    for (const NodeReport& n : report.nodes)
      std::printf("%s,%s,%s,%lld,%lld,%lld,%lld,%lld\n", n.id.c_str(), n.kind.c_str(),
                  shape_x(n.out_shape).c_str(), static_cast<long long>(n.params),
                  static_cast<long long>(n.macs), static_cast<long long>(n.rf),
                  static_cast<long long>(n.jump), static_cast<long long>(n.depth));
    std::printf("TOTAL,,,%lld,%lld,,,%lld\n", static_cast<long long>(report.total_params),
                static_cast<long long>(report.total_macs),
                static_cast<long long>(report.param_depth));
  } else {
    std::printf("%-12s %-8s %-12s %14s %16s %5s %5s %6s\n", "id", "kind", "out", "params",
                "macs", "rf", "jump", "depth");
    for (const NodeReport& n : report.nodes)
      std::printf("%-12s %-8s %-12s %14lld %16lld %5lld %5lld %6lld\n", n.id.c_str(),
                  n.kind.c_str(), shape_x(n.out_shape).c_str(),
                  static_cast<long long>(n.params), static_cast<long long>(n.macs),
                  static_cast<long long>(n.rf), static_cast<long long>(n.jump),
                  static_cast<long long>(n.depth));
    std::printf("total parameters: %lld\n", static_cast<long long>(report.total_params));
    std::printf("total macs:       %lld\n", static_cast<long long>(report.total_macs));
    std::printf("parameter depth:  %lld\n", static_cast<long long>(report.param_depth));
    if (report.multibranch_rf)
      std::printf("note: receptive fields reported along the deepest branch\n");
  }
  return 0;
}

int cmd_gradcheck(const GlobalArgs& args, const std::string& spec_path, std::int64_t batch,
                  double eps, double tol) {
  const std::string stem = std::filesystem::path(spec_path).stem().string();
  const ArchSpec spec = parse_archspec(read_text_file(spec_path), stem);

  InitPolicy policy;
  policy.stddev = 0.1;  // strong enough that ReLU kinks cannot hide errors
  const Rng base(args.seed);
  const ParamStore params = init_params(spec, policy, base.fork(1));
  Tensor batch_x({batch, spec.in_c, spec.in_h, spec.in_w});
  Rng xrng = base.fork(2);
  for (std::int64_t i = 0; i < batch_x.size(); ++i) batch_x[i] = xrng.gaussian(0.0, 1.0);

  const GradcheckReport report = gradcheck(spec, params, batch_x, nullptr, eps, tol);
  std::cout << report.table();
  return report.pass ? 0 : 1;
}

int cmd_augment_preview(const GlobalArgs& args, const std::string& image_path,
                        std::int64_t count) {
  RunConfig cfg = resolve_config(args);
  if (!cfg.has("augment.enabled")) cfg.set("augment.enabled", "1");
  const Tensor img = load_ppm(image_path);

  const std::int64_t s_min = cfg.i64("augment.scale_min", 0);
  const std::int64_t s_max = cfg.i64("augment.scale_max", s_min);
  const std::int64_t s_crop =
      cfg.i64("augment.crop", std::min(img.dim(1), img.dim(2)));
  const bool flip = cfg.flag("augment.flip", true);
  CropPolicy policy;
  policy.s_src = std::max(img.dim(1), img.dim(2));
  policy.s_crop = s_crop;
  policy.flip = flip;
  policy.validate();
  prepare_out_dir(args, cfg);

  std::optional<PcaColorModel> pca_model;
  if (cfg.flag("augment.pca", false)) {
    Rng prng(args.seed, 99);
    PcaColorModel model = fit_pca_color(sample_pixels({img}, prng));
    model.alpha_std = cfg.f64("augment.pca_scale", 0.1);
    pca_model = model;
  }

  Rng rng(args.seed, 7);
  for (std::int64_t k = 0; k < count; ++k) {
    Tensor work = img;
    if (s_min > 0) {
      ScaleJitterPolicy jitter;
      jitter.s_min = s_min;
      jitter.s_max = s_max;
      work = scale_jitter(work, jitter, rng);
    }
    CropPolicy local = policy;
    local.s_src = std::max(work.dim(1), work.dim(2));
    work = random_crop_flip(work, local, rng);
    if (pca_model) work = apply_pca_color(work, *pca_model, rng);
    save_ppm(out_path(args, "preview_" + std::to_string(k) + ".ppm"), work);
  }
  std::printf("wrote %lld previews to %s (crop multiplicity per source: %lld)\n",
              static_cast<long long>(count), args.out.c_str(),
              static_cast<long long>(policy.multiplicity()));
  return 0;
}

int cmd_gen_data(const GlobalArgs& args, std::int64_t classes, std::int64_t per_class,
                 std::int64_t size, double noise) {
  const RunConfig cfg = resolve_config(args);
  SyntheticConfig syn;
  syn.classes = classes;
  syn.per_class = per_class;
  syn.size = size;
  syn.noise = noise;
  syn.seed = args.seed;
  const Dataset ds = gen_synthetic(syn);
  prepare_out_dir(args, cfg);
  save_idx_images(out_path(args, "images.idx3-ubyte"), ds.images);
  save_idx_labels(out_path(args, "labels.idx1-ubyte"), ds.labels);
  std::cout << "wrote " << out_path(args, "images.idx3-ubyte") << " and "
            << out_path(args, "labels.idx1-ubyte") << " (" << ds.images.dim(0)
            << " samples, " << classes << " classes)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  GlobalArgs args;
  CLI::App app{"convkit — miniature CNN framework and transfer-learning pipeline"};
  app.require_subcommand(1);

  app.add_option("--config", args.config_path, "run configuration file (key=value sections)");
  app.add_option("--seed", args.seed, "master random seed")->default_val(0);
  app.add_option("--out", args.out, "output directory for artifacts")->default_val("run");
  app.add_option("--threads", args.threads, "worker threads (1 keeps runs reproducible)")
      ->default_val(1)
      ->check(CLI::PositiveNumber);
  app.add_option("--format", args.format, "stdout format")
      ->default_val("text")
      ->check(CLI::IsMember({"text", "csv"}));
  app.add_flag("--force", args.force, "reuse a non-empty output directory / skip hash checks");
  app.add_option("--set", args.sets, "override a config entry, e.g. --set train.lr=0.05")
      ->type_size(1);

  auto* train_cmd = app.add_subcommand("train", "train a model from [model]/[train]/[augment]");
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the configured data");
  std::string eval_checkpoint, eval_mode = "single";
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--mode", eval_mode, "evaluation protocol")
      ->check(CLI::IsMember({"single", "ten-crop"}));
  auto* extract_cmd = app.add_subcommand("extract", "extract tapped features to CSV");
  std::string extract_checkpoint, extract_tap, extract_rule = "flatten";
  extract_cmd->add_option("--checkpoint", extract_checkpoint, "codebook checkpoint")
      ->required();
  extract_cmd->add_option("--tap", extract_tap, "node id to tap")->required();
  extract_cmd->add_option("--rule", extract_rule, "flatten or gap");
  auto* transfer_cmd =
      app.add_subcommand("transfer", "run the five-step transfer experiment from [transfer]");
  auto* finetune_cmd =
      app.add_subcommand("finetune", "fine-tune a codebook checkpoint on the configured data");
  std::string finetune_checkpoint;
  finetune_cmd->add_option("--checkpoint", finetune_checkpoint, "codebook checkpoint")
      ->required();
  auto* analyze_cmd = app.add_subcommand("analyze", "report per-layer shapes/params/macs/rf");
  std::string analyze_spec;
  analyze_cmd->add_option("spec", analyze_spec, "architecture spec file")->required();
  auto* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference gradient check on a spec");
  std::string gradcheck_spec;
  std::int64_t gradcheck_batch = 2;
  double gradcheck_eps = 1e-6, gradcheck_tol = 1e-4;
  gradcheck_cmd->add_option("--spec", gradcheck_spec, "architecture spec file")->required();
  gradcheck_cmd->add_option("--batch", gradcheck_batch, "batch size")
      ->check(CLI::PositiveNumber);
  gradcheck_cmd->add_option("--eps", gradcheck_eps, "finite-difference step");
  gradcheck_cmd->add_option("--tol", gradcheck_tol, "max relative error tolerance");
  auto* preview_cmd =
      app.add_subcommand("augment-preview", "write augmented variants of one image");
  std::string preview_image;
  std::int64_t preview_count = 8;
  preview_cmd->add_option("--image", preview_image, "source PPM image")->required();
  preview_cmd->add_option("--count", preview_count, "number of previews")
      ->check(CLI::PositiveNumber);
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic IDX dataset");
  std::int64_t gen_classes = 4, gen_n = 100, gen_size = 28;
  double gen_noise = 0.1;
  gen_cmd->add_option("--classes", gen_classes, "number of shape classes")->required();
  gen_cmd->add_option("--n", gen_n, "samples per class")->required();
  gen_cmd->add_option("--size", gen_size, "square image size");
  gen_cmd->add_option("--noise", gen_noise, "additive noise level");

  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(train_cmd)) return cmd_train(args);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(args, eval_checkpoint, eval_mode);
    if (app.got_subcommand(extract_cmd))
      return cmd_extract(args, extract_checkpoint, extract_tap, extract_rule);
    if (app.got_subcommand(transfer_cmd)) return cmd_transfer(args);
    if (app.got_subcommand(finetune_cmd)) return cmd_finetune(args, finetune_checkpoint);
    if (app.got_subcommand(analyze_cmd)) return cmd_analyze(args, analyze_spec);
    if (app.got_subcommand(gradcheck_cmd))
      return cmd_gradcheck(args, gradcheck_spec, gradcheck_batch, gradcheck_eps, gradcheck_tol);
    if (app.got_subcommand(preview_cmd))
      return cmd_augment_preview(args, preview_image, preview_count);
    if (app.got_subcommand(gen_cmd))
      return cmd_gen_data(args, gen_classes, gen_n, gen_size, gen_noise);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

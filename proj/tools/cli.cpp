#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "ilgnet/ava.hpp"
#include "ilgnet/checkpoint.hpp"
#include "ilgnet/gradcheck.hpp"
#include "ilgnet/image.hpp"
#include "ilgnet/network.hpp"
#include "ilgnet/render.hpp"
#include "ilgnet/synth.hpp"
#include "ilgnet/trainer.hpp"

namespace ilgnet::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SplitArgs {
  std::string metadata, protocol, out;
  double delta = 0.0;
  std::uint64_t seed = 1;
  std::optional<std::size_t> test_count;
};

struct TrainArgs {
  std::string split, images, config, out, metrics, init;
  std::optional<std::string> variant;
};

struct EvalArgs {
  std::string ckpt, split, images, partition = "test";
  std::optional<std::string> variant;
};

struct ClassifyArgs {
  std::string ckpt;
  std::vector<std::string> images;
};

struct FeaturesArgs {
  std::string ckpt, image, out;
  std::vector<std::string> taps;
};

struct GradcheckArgs {
  std::string op = "all";
  std::size_t trials = 10;
  std::uint64_t seed = 1;
};

struct BenchArgs {
  std::string variant = "ilgnet-inc-v1-bn";
  std::size_t iters = 10, batch = 1, side = 224;
  double width = 1.0;
  std::uint64_t seed = 1;
};

struct SynthArgs {
  std::size_t count = 64;
  std::uint64_t seed = 1;
  std::string rule = "brightness", out;
  std::size_t min_side = 40, max_side = 80;
};

VariantKind variant_or_usage(const std::string& name) {
  try {
    return parse_variant(name);
  } catch (const ShapeError& e) {
    throw UsageError(e.what());
  }
}

ava::Split load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split " + path);
  return ava::read_split(in);
}

std::vector<Tensor32> load_images(const std::vector<ava::LabeledExample>& rows, const fs::path& dir) {
  std::vector<Tensor32> images;
  images.reserve(rows.size());
  for (const auto& row : rows) {
    fs::path p = dir / (row.image_id + ".ppm");
    if (!fs::exists(p)) throw DataError("missing image " + p.string());
    images.push_back(image::load_ppm(p));
  }
  return images;
}

Dataset to_dataset(const std::vector<ava::LabeledExample>& rows, const std::vector<Tensor32>& raw,
                   const image::ChannelMeans& means, std::size_t side) {
  Dataset ds;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ds.add(image::preprocess(raw[i], means, side), static_cast<int>(rows[i].label), rows[i].image_id);
  }
  return ds;
}

int cmd_split(const SplitArgs& a, std::ostream& out) {
  std::ifstream in(a.metadata);
  if (!in) throw DataError("cannot open metadata " + a.metadata);
  auto records = ava::parse_metadata_strict(in);

  ava::Split split;
  if (a.protocol == "ava1") {
    std::size_t test_count = a.test_count.value_or(records.size() / 10);
    split = ava::ava1_split(records, a.delta, a.seed, test_count);
  } else {
    split = ava::ava2_split(records, a.seed);
  }
  std::ofstream file(a.out);
  if (!file) throw DataError("cannot write split " + a.out);
  ava::write_split(file, split);
  if (!file) throw DataError("failed writing split " + a.out);

  auto count = [](const std::vector<ava::LabeledExample>& rows, ava::Label label) {
    return std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.label == label; });
  };
  auto tg = count(split.train, ava::Label::good), tb = count(split.train, ava::Label::bad);
  auto sg = count(split.test, ava::Label::good), sb = count(split.test, ava::Label::bad);
  out << "protocol=" << a.protocol << '\n'
      << "records=" << records.size() << '\n'
      << "train=" << split.train.size() << '\n'
      << "test=" << split.test.size() << '\n'
      << "good=" << tg + sg << '\n'
      << "bad=" << tb + sb << '\n'
      << "train_good=" << tg << '\n'
      << "train_bad=" << tb << '\n'
      << "test_good=" << sg << '\n'
      << "test_bad=" << sb << '\n'
      << "out=" << a.out << '\n';
  return kOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainConfig config;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw DataError("cannot open config " + a.config);
    config = TrainConfig::parse(in);
  }
  if (a.variant) config.variant.kind = variant_or_usage(*a.variant);
  config.validate();

  auto split = load_split(a.split);
  if (split.train.empty()) throw DataError("split has no training rows");
  auto raw_train = load_images(split.train, a.images);
  auto raw_test = load_images(split.test, a.images);
  auto means = image::compute_channel_means(raw_train);
  const std::size_t side = config.variant.input_side;
  Dataset train_set = to_dataset(split.train, raw_train, means, side);
  Dataset test_set = to_dataset(split.test, raw_test, means, side);

  Network net = [&] {
    if (a.init.empty()) return assemble(config.variant, config.seed);
    Network n = assemble(config.variant, config.seed);
    load_checkpoint_into(n, a.init);
    return n;
  }();
  net.channel_means = means;

  auto fr = freeze(net, config.freeze_prefixes);
  for (const auto& prefix : fr.unmatched) err << "warning: freeze prefix '" << prefix << "' matches no parameter\n";

  TrainResult result = train(net, train_set, config, test_set.size() ? &test_set : nullptr);
  save_checkpoint(net, a.out, &config);

  std::string metrics = a.metrics.empty() ? a.out + ".metrics.csv" : a.metrics;
  std::ofstream csv(metrics);
  if (!csv) throw DataError("cannot write metrics " + metrics);
  result.log.write_csv(csv);

  out << std::setprecision(9);
  out << "variant=" << variant_name(config.variant.kind) << '\n'
      << "train_examples=" << train_set.size() << '\n'
      << "eval_examples=" << test_set.size() << '\n'
      << "iterations=" << config.max_iter << '\n'
      << "frozen_parameters=" << fr.frozen << '\n'
      << "first_epoch_loss=" << result.epoch_mean_loss.front() << '\n'
      << "last_epoch_loss=" << result.epoch_mean_loss.back() << '\n'
      << "metrics_rows=" << result.log.rows.size() << '\n'
      << "checkpoint=" << a.out << '\n'
      << "metrics=" << metrics << '\n';
  return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  Network net = load_checkpoint(a.ckpt);
  if (a.variant && variant_or_usage(*a.variant) != net.variant().kind) {
    throw DataError("variant mismatch: checkpoint holds " + std::string(variant_name(net.variant().kind)) +
                    ", requested " + *a.variant);
  }
  auto split = load_split(a.split);
  const auto& rows = a.partition == "train" ? split.train : split.test;
  if (rows.empty()) throw DataError("partition '" + a.partition + "' is empty");
  auto raw = load_images(rows, a.images);
  Dataset ds = to_dataset(rows, raw, net.channel_means, net.variant().input_side);
  Evaluation ev = evaluate(net, ds);

  nlohmann::ordered_json report;
  report["variant"] = variant_name(net.variant().kind);
  report["partition"] = a.partition;
  report["examples"] = ev.total;
  report["accuracy"] = ev.accuracy;
  report["confusion"] = {{"true_bad", {{"pred_bad", ev.confusion[0][0]}, {"pred_good", ev.confusion[0][1]}}},
                         {"true_good", {{"pred_bad", ev.confusion[1][0]}, {"pred_good", ev.confusion[1][1]}}}};
  out << report.dump(2) << '\n';
  return kOk;
}

int cmd_classify(const ClassifyArgs& a, std::ostream& out, std::ostream& err) {
  Network net = load_checkpoint(a.ckpt);
  int status = kOk;
  for (const auto& path : a.images) {
    try {
      Tensor32 x = image::preprocess(image::load_ppm(path), net.channel_means, net.variant().input_side);
      Tensor32 p = net.classify(x);
      std::ostringstream row;
      row << std::setprecision(9) << path << ',' << p[1] << ',' << (predicted_class(p[0], p[1]) ? "good" : "bad");
      out << row.str() << '\n';
    } catch (const DataError& e) {
      out << path << ",,error\n";
      std::string msg = e.what();
      if (!msg.starts_with(path)) msg = path + ": " + msg;
      err << "error: " << msg << '\n';
      status = kDataError;
    }
  }
  return status;
}

Tap parse_tap(const std::string& s) {
  for (Tap t : kAllTaps) {
    if (tap_label(t) == s) return t;
  }
  throw UsageError("unknown tap '" + s + "' (expected 1..7 or concat)");
}

int cmd_features(const FeaturesArgs& a, std::ostream& out) {
  Network net = load_checkpoint(a.ckpt);
  std::vector<Tap> taps;
  for (const auto& s : a.taps) taps.push_back(parse_tap(s));
  Tensor32 x = image::preprocess(image::load_ppm(a.image), net.channel_means, net.variant().input_side);
  FeatureTaps ft = tap_features(net, x, taps);

  fs::create_directories(a.out);
  for (const auto& f : ft.features) {
    GrayImage g = render_tap(f.value);
    fs::path file = fs::path(a.out) / ("tap_" + tap_label(f.tap) + ".pgm");
    image::write_file(file, image::encode_pgm(g.width, g.height, g.pixels));
    out << "tap=" << tap_label(f.tap) << " shape=" << to_string(f.value.shape()) << " file=" << file.string() << '\n';
  }
  out << std::setprecision(9) << "activation_density=" << ft.activation_density << '\n';
  return kOk;
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  const auto& known = gradcheck_op_names();
  std::vector<std::string> ops;
  if (a.op == "all") {
    ops = known;
  } else if (std::find(known.begin(), known.end(), a.op) != known.end()) {
    ops.push_back(a.op);
  } else {
    throw UsageError("unknown op '" + a.op + "'");
  }
  GradCheckConfig cfg;
  bool ok = true;
  out << std::setprecision(3);
  for (const auto& op : ops) {
    GradCheckReport r = gradcheck_op(op, a.trials, a.seed, cfg);
    std::size_t checked = 0, skipped = 0;
    for (const auto& arg : r.arguments) {
      checked += arg.checked;
      skipped += arg.skipped;
    }
    bool pass = r.passed(cfg.tolerance);
    ok = ok && pass;
    out << "op=" << op << " max_rel_error=" << r.max_rel_error() << " checked=" << checked << " skipped=" << skipped
        << " status=" << (pass ? "pass" : "FAIL") << '\n';
  }
  out << "tolerance=" << cfg.tolerance << " result=" << (ok ? "pass" : "FAIL") << '\n';
  if (!ok) {
    err << "error: gradient check exceeded tolerance " << cfg.tolerance << '\n';
    return kNumericFailure;
  }
  return kOk;
}

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  if (a.iters == 0 || a.batch == 0) throw UsageError("--iters and --batch must be >= 1");
  ArchVariant variant{variant_or_usage(a.variant), a.width, a.side};
  try {
    variant.validate();
  } catch (const ShapeError& e) {
    throw UsageError(e.what());
  }
  Network net = assemble(variant, a.seed);
  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<float> dist(-100.0f, 100.0f);
  Tensor32 x({a.batch, 3, a.side, a.side});
  for (auto& v : x.data()) v = dist(rng);

  constexpr int kWarmup = 3;
  for (int i = 0; i < kWarmup; ++i) (void)net.classify(x);
  std::vector<double> per_image;
  for (std::size_t i = 0; i < a.iters; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    (void)net.classify(x);
    double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    per_image.push_back(std::max(s, 1e-9) / static_cast<double>(a.batch));
  }
  double mean = 0.0;
  for (double s : per_image) mean += s;
  mean /= static_cast<double>(per_image.size());
  auto [mn, mx] = std::minmax_element(per_image.begin(), per_image.end());

  out << std::setprecision(6);
  out << "variant=" << a.variant << '\n'
      << "width_multiplier=" << a.width << '\n'
      << "input_side=" << a.side << '\n'
      << "batch=" << a.batch << '\n'
      << "warmup=" << kWarmup << '\n'
      << "iters=" << per_image.size() << '\n'
      << "mean_s_per_image=" << mean << '\n'
      << "min_s_per_image=" << *mn << '\n'
      << "max_s_per_image=" << *mx << '\n'
      << "note=reference timings (0.31s ilgnet-inc-v1-bn, 0.33s third-googlenet-v1-bn) were close "
         "on 2016 hardware; compare variants on the same machine, not absolute values\n";
  return kOk;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  ava::SynthRule rule;
  try {
    rule = ava::parse_synth_rule(a.rule);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  auto corpus = ava::synth_dataset(a.count, a.seed, rule, a.out, a.min_side, a.max_side);
  out << "records=" << corpus.records.size() << '\n'
      << "metadata=" << corpus.metadata.string() << '\n'
      << "images=" << corpus.image_dir.string() << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ILGNet aesthetic classifier toolkit", "ilgnet"};
  app.require_subcommand(1);

  SplitArgs split;
  auto* s = app.add_subcommand("split", "build an AVA1/AVA2 train/test split");
  s->add_option("--metadata", split.metadata, "rating metadata CSV")->required();
  s->add_option("--protocol", split.protocol)->required()->check(CLI::IsMember({"ava1", "ava2"}));
  s->add_option("--delta", split.delta, "AVA1 ambiguity margin")->check(CLI::NonNegativeNumber);
  s->add_option("--seed", split.seed);
  s->add_option("--test-count", split.test_count, "AVA1 test size (default N/10)");
  s->add_option("--out", split.out, "split CSV")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a variant and write a checkpoint");
  t->add_option("--split", tr.split)->required();
  t->add_option("--images", tr.images, "directory of <image_id>.ppm")->required();
  t->add_option("--variant", tr.variant);
  t->add_option("--config", tr.config, "key=value TrainConfig file");
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--metrics", tr.metrics, "metrics CSV (default <out>.metrics.csv)");
  t->add_option("--init", tr.init, "start from this checkpoint's weights");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "accuracy and confusion matrix on a split partition");
  e->add_option("--ckpt", ev.ckpt)->required();
  e->add_option("--split", ev.split)->required();
  e->add_option("--images", ev.images)->required();
  e->add_option("--partition", ev.partition)->check(CLI::IsMember({"train", "test"}));
  e->add_option("--variant", ev.variant, "expected variant");

  ClassifyArgs cl;
  auto* c = app.add_subcommand("classify", "label images good or bad");
  c->add_option("--ckpt", cl.ckpt)->required();
  c->add_option("images", cl.images, "PPM files")->required();

  FeaturesArgs fe;
  auto* f = app.add_subcommand("features", "render tap activations as PGM grids");
  f->add_option("--ckpt", fe.ckpt)->required();
  f->add_option("--image", fe.image)->required();
  f->add_option("--out", fe.out)->required();
  f->add_option("--taps", fe.taps, "subset of 1..7,concat")->delimiter(',');

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference check of every op");
  g->add_option("--op", gc.op, "op name or all");
  g->add_option("--trials", gc.trials)->check(CLI::PositiveNumber);
  g->add_option("--seed", gc.seed);

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "time inference-mode forward passes");
  b->add_option("--variant", be.variant);
  b->add_option("--iters", be.iters);
  b->add_option("--batch", be.batch);
  b->add_option("--side", be.side);
  b->add_option("--width", be.width);
  b->add_option("--seed", be.seed);

  SynthArgs sy;
  auto* y = app.add_subcommand("synth", "write a synthetic PPM corpus with metadata");
  y->add_option("--count", sy.count)->check(CLI::PositiveNumber);
  y->add_option("--seed", sy.seed);
  y->add_option("--rule", sy.rule, "brightness or hue");
  y->add_option("--out", sy.out)->required();
  y->add_option("--min-side", sy.min_side);
  y->add_option("--max-side", sy.max_side);

  std::vector<const char*> argv{"ilgnet"};
  for (const auto& arg : args) argv.push_back(arg.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& pe) {
    int code = app.exit(pe, out, err);
    if (code == 0) return kOk;
    auto active = app.get_subcommands();
    err << (active.empty() ? app.help() : active.front()->help());
    return kUsage;
  }

  try {
    if (s->parsed()) return cmd_split(split, out);
    if (t->parsed()) return cmd_train(tr, out, err);
    if (e->parsed()) return cmd_eval(ev, out);
    if (c->parsed()) return cmd_classify(cl, out, err);
    if (f->parsed()) return cmd_features(fe, out);
    if (g->parsed()) return cmd_gradcheck(gc, out, err);
    if (b->parsed()) return cmd_bench(be, out);
    if (y->parsed()) return cmd_synth(sy, out);
  } catch (const UsageError& ex) {
    err << "usage error: " << ex.what() << '\n';
    return kUsage;
  } catch (const NumericError& ex) {
    err << "numeric failure: " << ex.what() << '\n';
    return kNumericFailure;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << '\n';
    return kDataError;
  } catch (const std::exception& ex) {
    err << "data error: " << ex.what() << '\n';
    return kDataError;
  }
  err << app.help();
  return kUsage;
}

}  // namespace ilgnet::cli

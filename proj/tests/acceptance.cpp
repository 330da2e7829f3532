// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "ilgnet/ava.hpp"
#include "ilgnet/checkpoint.hpp"
#include "ilgnet/network.hpp"
#include "ilgnet/trainer.hpp"
#include "support/equivalence.hpp"
#include "support/gen.hpp"
#include "support/split_oracle.hpp"
#include "support/tempdir.hpp"

using namespace ilgnet;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  int code = ilgnet::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> fields(const std::string& text) {
  std::map<std::string, std::string> m;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    auto eq = line.find('=');
    if (eq != std::string::npos) m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Each check returns an empty string on success, otherwise the reason.
using Check = std::function<std::string(std::ostringstream& detail)>;

#define REQUIRE(cond, msg)                      \
  do {                                          \
    if (!(cond)) return std::string(msg);       \
  } while (0)

std::string gradient_suite(std::ostringstream& d) {
  auto t0 = std::chrono::steady_clock::now();
  auto r = invoke({"gradcheck", "--op", "all", "--trials", "10"});
  double s = seconds_since(t0);
  d << "runtime " << s << " s";
  REQUIRE(r.code == 0, "exit code " + std::to_string(r.code) + "\n" + r.out);
  std::set<std::string> ops;
  std::istringstream in(r.out);
  for (std::string line; std::getline(in, line);) {
    if (!line.starts_with("op=")) continue;
    auto name = line.substr(3, line.find(' ') - 3);
    auto pos = line.find("max_rel_error=") + 14;
    double err = std::stod(line.substr(pos, line.find(' ', pos) - pos));
    REQUIRE(err < 1e-6, name + " error " + std::to_string(err));
    REQUIRE(line.find("status=pass") != std::string::npos, line);
    ops.insert(name);
  }
  std::set<std::string> want{"conv2d", "maxpool2d", "global_avg_pool", "relu",
                             "batchnorm", "concat", "linear", "softmax_xent"};
  REQUIRE(ops == want, "op list differs");
  REQUIRE(s < 120.0, "too slow");
  return {};
}

std::string oracle_equivalence(std::ostringstream& d) {
  auto conv = oracle::sweep_conv2d(25, 1001);
  auto pool = oracle::sweep_maxpool2d(25, 1002);
  auto gap = oracle::sweep_global_avg_pool(25, 1003);
  d << "configs " << conv.configs << "/" << pool.configs << "/" << gap.configs << ", worst " << conv.worst << "/"
    << pool.worst << "/" << gap.worst;
  for (const auto* s : {&conv, &pool, &gap}) {
    REQUIRE(s->configs >= 20, "too few configurations");
    REQUIRE(s->shapes_ok, "shape mismatch");
    REQUIRE(s->worst <= 1e-5, "mismatch above 1e-5");
  }
  return {};
}

std::string architecture_audit(std::ostringstream& d) {
  auto net = assemble(ArchVariant{}, 1);
  auto counts = net.count_layers();
  REQUIRE(counts.parameter_layers == 13 && counts.pooling_layers == 4,
          "count_layers (" + std::to_string(counts.parameter_layers) + ", " + std::to_string(counts.pooling_layers) +
              ")");
  REQUIRE(net.layers()[*net.tap_layer(Tap::concat)].shape == (Shape{1024}), "concat width");
  testgen::Gen g(5);
  auto x = g.tensor<float>({2, 3, 224, 224}, -100.0, 100.0);
  auto warm = net.classify(x);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(std::abs(double(warm[2 * i]) + double(warm[2 * i + 1]) - 1.0) <= 1e-6, "row does not sum to 1");
  }
  auto one = g.tensor<float>({1, 3, 224, 224}, -100.0, 100.0);
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 3; ++i) (void)net.classify(one);
  double per = seconds_since(t0) / 3.0;
  d << "(13, 4), concat 1024, " << per << " s/image";
  REQUIRE(per < 2.0, "forward too slow");
  return {};
}

std::string lr_schedule(std::ostringstream& d) {
  std::size_t checked = 0;
  for (const auto& c : {TrainConfig::ava1_delta0(), TrainConfig::ava1_delta1(), TrainConfig::ava2()}) {
    for (std::uint64_t it : {std::uint64_t{0}, c.stepsize - 1, c.stepsize, 2 * c.stepsize, c.max_iter - 1}) {
      long double want = c.base_lr;
      for (std::uint64_t k = 0; k < it / c.stepsize; ++k) want *= static_cast<long double>(c.gamma);
      long double got = lr_at(it, c);
      REQUIRE(std::abs(got - want) <= 1e-12L * want, "iteration " + std::to_string(it));
      ++checked;
    }
  }
  auto a = TrainConfig::ava1_delta0(), b = TrainConfig::ava1_delta1(), c = TrainConfig::ava2();
  REQUIRE(a.base_lr == 1e-4 && a.stepsize == 100000 && a.max_iter == 475000, "AVA1 delta 0 preset");
  REQUIRE(b.base_lr == 1e-5 && b.stepsize == 19000 && b.max_iter == 760000, "AVA1 delta 1 preset");
  REQUIRE(c.base_lr == 1e-5 && c.stepsize == 13325 && c.max_iter == 533000, "AVA2 preset");
  d << checked << " points";
  return {};
}

std::string split_protocols(std::ostringstream& d) {
  auto t0 = std::chrono::steady_clock::now();
  auto rs = testgen::records(10000, 2024);
  std::vector<ava::LabeledExample> base_test;
  for (double delta : {0.0, 0.5, 1.0}) {
    auto split = ava::ava1_split(rs, delta, 7, 1000);
    auto v = oracle::check_ava1(rs, split, delta, 1000);
    REQUIRE(v.ok, "ava1 delta " + std::to_string(delta) + ": " + v.why);
    if (delta == 0.0) base_test = split.test;
    REQUIRE(split.test == base_test, "test set changed with delta");
    d << "delta " << delta << " train " << split.train.size() << "; ";
  }
  auto split = ava::ava2_split(rs, 7);
  auto v = oracle::check_ava2(rs, split);
  REQUIRE(v.ok, "ava2: " + v.why);
  REQUIRE(split.train.size() + split.test.size() == 2000, "decile sizes");
  double s = seconds_since(t0);
  d << "ava2 " << split.train.size() << "+" << split.test.size() << ", " << s << " s";
  REQUIRE(s < 10.0, "too slow");
  return {};
}

constexpr const char* kDeskConfig =
    "base_lr=0.01\ngamma=1\nmax_iter=240\nbatch_size=8\neval_interval=40\nwidth_multiplier=0.25\ninput_side=64\nseed=1\n";

std::string desk_learning(std::ostringstream& d, const testgen::TempDir& dir) {
  auto t0 = std::chrono::steady_clock::now();
  auto corpus = (dir / "desk").string();
  REQUIRE(invoke({"synth", "--count", "64", "--seed", "11", "--rule", "brightness", "--out", corpus}).code == 0,
          "synth failed");
  auto split = (dir / "desk.csv").string();
  REQUIRE(invoke({"split", "--metadata", corpus + "/metadata.csv", "--protocol", "ava1", "--test-count", "0", "--out",
                  split})
                  .code == 0,
          "split failed");
  std::ofstream(dir / "desk.cfg") << kDeskConfig;
  auto model = (dir / "desk.ilgc").string();
  auto tr = invoke({"train", "--split", split, "--images", corpus + "/images", "--config", (dir / "desk.cfg").string(),
                    "--out", model});
  REQUIRE(tr.code == 0, "train failed: " + tr.err);
  auto f = fields(tr.out);
  double first = std::stod(f["first_epoch_loss"]), last = std::stod(f["last_epoch_loss"]);
  auto ev = invoke({"eval", "--ckpt", model, "--split", split, "--images", corpus + "/images", "--partition", "train"});
  REQUIRE(ev.code == 0, "eval failed: " + ev.err);
  auto pos = ev.out.find("\"accuracy\": ") + 12;
  double acc = std::stod(ev.out.substr(pos));
  double s = seconds_since(t0);
  d << "240 iterations, epoch loss " << first << " -> " << last << ", train accuracy " << acc << ", " << s << " s";
  REQUIRE(acc >= 0.95, "accuracy below 0.95");
  REQUIRE(last < first, "loss did not fall");
  REQUIRE(s < 1800.0, "too slow");
  return {};
}

std::string ablation_parity(std::ostringstream& d, const testgen::TempDir& dir) {
  auto corpus = (dir / "desk").string();
  auto split = (dir / "abl.csv").string();
  REQUIRE(invoke({"split", "--metadata", corpus + "/metadata.csv", "--protocol", "ava1", "--test-count", "8", "--out",
                  split})
                  .code == 0,
          "split failed");
  std::ofstream(dir / "one.cfg") << "base_lr=0.01\nmax_iter=1\nbatch_size=8\neval_interval=1\nwidth_multiplier=0.25\n"
                                    "input_side=64\n";
  for (std::string v : {"ilgnet-inc-v1-bn", "ilgnet-without-inc", "third-googlenet-v1-bn"}) {
    auto model = (dir / (v + ".ilgc")).string();
    auto tr = invoke({"train", "--split", split, "--images", corpus + "/images", "--config",
                      (dir / "one.cfg").string(), "--variant", v, "--out", model});
    REQUIRE(tr.code == 0, v + " train: " + tr.err);
    auto ev = invoke({"eval", "--ckpt", model, "--split", split, "--images", corpus + "/images", "--variant", v});
    REQUIRE(ev.code == 0, v + " eval: " + ev.err);
  }
  auto inc = assemble(ArchVariant{VariantKind::ilgnet_inc_v1_bn, 1.0, 224}, 1);
  auto plain = assemble(ArchVariant{VariantKind::ilgnet_without_inc, 1.0, 224}, 1);
  for (Tap t : {Tap::stem, Tap::inception_a, Tap::inception_b, Tap::inception_c, Tap::local_a, Tap::local_b,
                Tap::global, Tap::concat}) {
    REQUIRE(inc.layers()[*inc.tap_layer(t)].shape == plain.layers()[*plain.tap_layer(t)].shape,
            "stage " + tap_label(t) + " differs");
  }
  d << "3 variants trained 1 step and evaluated; 8 stage shapes equal";
  return {};
}

std::string freeze_preset(std::ostringstream& d) {
  auto net = assemble(ArchVariant{VariantKind::ilgnet_inc_v1_bn, 0.25, 64}, 3);
  std::vector<Tensor32> before;
  for (const auto& p : net.parameters()) before.push_back(p.value);
  TrainConfig cfg;
  cfg.base_lr = 0.01;
  cfg.gamma = 1.0;
  cfg.max_iter = 10;
  cfg.batch_size = 4;
  cfg.freeze_prefixes = domain_adaptation_prefixes();
  cfg.variant = net.variant();
  testgen::Gen g(8);
  Dataset ds;
  for (int i = 0; i < 8; ++i) ds.add(g.tensor<float>({1, 3, 64, 64}, -50.0, 50.0), i % 2);
  train(net, ds, cfg);
  std::set<std::string> trainable, changed;
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].frozen) trainable.insert(params[i].name);
    if (params[i].value != before[i]) changed.insert(params[i].name);
  }
  std::set<std::string> want{"local_a/proj/weight", "local_a/proj/bias", "local_b/proj/weight", "local_b/proj/bias",
                             "global/proj/weight",  "global/proj/bias",  "classifier/weight",   "classifier/bias"};
  REQUIRE(trainable == want, "trainable set differs");
  REQUIRE(changed == want, "a frozen parameter changed or a trainable one did not");
  d << params.size() - 8 << " frozen bit-identical after 10 steps, 8 trainable updated";
  return {};
}

std::string persistence(std::ostringstream& d, const testgen::TempDir& dir) {
  auto model = dir / "ilgnet-inc-v1-bn.ilgc";  // written by the ablation check
  auto net = load_checkpoint(model);
  auto copy = dir / "copy.ilgc";
  save_checkpoint(net, copy);
  auto back = load_checkpoint(copy);
  save_checkpoint(back, dir / "copy2.ilgc");
  REQUIRE(slurp(copy) == slurp(dir / "copy2.ilgc"), "resave not byte-identical");
  testgen::Gen g(4);
  auto x = g.tensor<float>({3, 3, 64, 64}, -50.0, 50.0);
  REQUIRE(back.classify(x) == net.classify(x), "probabilities differ");

  auto bytes = slurp(copy);
  auto attempt = [&](const std::string& content, const std::string& needle) {
    std::ofstream(dir / "bad.ilgc", std::ios::binary) << content;
    try {
      load_checkpoint(dir / "bad.ilgc");
    } catch (const CheckpointError& e) {
      return std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
  };
  REQUIRE(attempt(bytes.substr(0, bytes.size() - 1), "truncated"), "truncation not reported");
  auto flipped = bytes;
  flipped[flipped.size() / 2 + 200] ^= 0x01;
  REQUIRE(attempt(flipped, "checksum"), "corruption not reported");
  REQUIRE(attempt("ILGX" + bytes.substr(4), "not an ILGC checkpoint"), "bad magic not reported");
  auto r = invoke({"classify", "--ckpt", (dir / "bad.ilgc").string(), (dir / "desk/images/synth_0000.ppm").string()});
  REQUIRE(r.code == 2, "CLI accepted a corrupted checkpoint");
  d << "bit-exact round trip; truncated, flipped and bad-magic files rejected";
  return {};
}

std::string visualization(std::ostringstream& d, const testgen::TempDir& dir) {
  auto ckpt = (dir / "full.ilgc").string();
  save_checkpoint(assemble(ArchVariant{}, 9), ckpt);
  auto img = (dir / "desk/images/synth_0001.ppm").string();
  auto a = invoke({"features", "--ckpt", ckpt, "--image", img, "--out", (dir / "fa").string()});
  auto b = invoke({"features", "--ckpt", ckpt, "--image", img, "--out", (dir / "fb").string()});
  REQUIRE(a.code == 0 && b.code == 0, "features failed: " + a.err);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "fa")) {
    ++files;
    REQUIRE(slurp(e.path()) == slurp(dir / "fb" / e.path().filename().string()), "nondeterministic " + e.path().string());
  }
  REQUIRE(files == 8, std::to_string(files) + " files");
  const char* shapes[] = {"tap=1 shape=(192x28x28)", "tap=2 shape=(256x28x28)", "tap=3 shape=(480x28x28)",
                          "tap=4 shape=(512x14x14)", "tap=5 shape=(256)",          "tap=6 shape=(256)",
                          "tap=7 shape=(512)",         "tap=concat shape=(1024)"};
  for (const char* s : shapes) REQUIRE(a.out.find(s) != std::string::npos, std::string("missing ") + s + "\n" + a.out);
  double density = std::stod(fields(a.out)["activation_density"]);
  REQUIRE(density >= 0.0 && density <= 1.0, "density out of range");
  REQUIRE(fields(a.out)["activation_density"] == fields(b.out)["activation_density"], "density differs");
  d << "8 PGMs, deterministic, activation_density " << density;
  return {};
}

}  // namespace

int main() {
  testgen::TempDir dir("acceptance");
  const std::vector<std::pair<std::string, Check>> criteria{
      {"gradient suite", gradient_suite},
      {"oracle equivalence", oracle_equivalence},
      {"architecture audit", architecture_audit},
      {"lr schedule", lr_schedule},
      {"split protocols", split_protocols},
      {"desk-scale learning", [&](std::ostringstream& d) { return desk_learning(d, dir); }},
      {"ablation parity", [&](std::ostringstream& d) { return ablation_parity(d, dir); }},
      {"domain-adaptation freeze", freeze_preset},
      {"persistence", [&](std::ostringstream& d) { return persistence(d, dir); }},
      {"visualization", [&](std::ostringstream& d) { return visualization(d, dir); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    std::ostringstream detail;
    std::string why;
    try {
      why = criteria[i].second(detail);
    } catch (const std::exception& e) {
      why = std::string("exception: ") + e.what();
    }
    bool ok = why.empty();
    failed += !ok;
    std::printf("%s %2zu %s: %s\n", ok ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                ok ? detail.str().c_str() : why.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}

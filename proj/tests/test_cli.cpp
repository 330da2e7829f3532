#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "ilgnet/ava.hpp"
#include "ilgnet/checkpoint.hpp"
#include "ilgnet/render.hpp"
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

// key=value lines into a map.
std::map<std::string, std::string> fields(const std::string& text) {
  std::map<std::string, std::string> m;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq != std::string::npos) m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> v;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

fs::path write_records(const fs::path& p, const std::vector<ava::RatingRecord>& rs) {
  std::ofstream out(p);
  ava::write_metadata(out, rs);
  return p;
}

constexpr const char* kQuickConfig =
    "base_lr=0.01\ngamma=1\nmax_iter=4\nbatch_size=4\neval_interval=2\nwidth_multiplier=0.125\ninput_side=32\n";

// One synthetic corpus, split and trained model shared by the suite.
class CliCorpus : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir = std::make_unique<testgen::TempDir>("cli");
    auto& d = *dir;
    ASSERT_EQ(invoke({"synth", "--count", "16", "--seed", "3", "--out", (d / "corpus").string()}).code, 0);
    write_text(d / "quick.cfg", kQuickConfig);
    ASSERT_EQ(invoke({"split", "--metadata", metadata(), "--protocol", "ava1", "--test-count", "4", "--out", split()})
                  .code,
              0);
    auto r = invoke({"train", "--split", split(), "--images", images(), "--config", config(), "--out", model()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { dir.reset(); }

  static std::string path(const std::string& name) { return (*dir / name).string(); }
  static std::string metadata() { return path("corpus/metadata.csv"); }
  static std::string images() { return path("corpus/images"); }
  static std::string split() { return path("split.csv"); }
  static std::string config() { return path("quick.cfg"); }
  static std::string model() { return path("model.ilgc"); }
  static std::string image(int i) {
    std::string n = std::to_string(i);
    return path("corpus/images/synth_" + std::string(4 - n.size(), '0') + n + ".ppm");
  }

  static std::unique_ptr<testgen::TempDir> dir;
};

std::unique_ptr<testgen::TempDir> CliCorpus::dir;

}  // namespace

// split ----------------------------------------------------------------------

TEST(CliSplit, Ava2OnThousandRecords) {
  testgen::TempDir d("split");
  auto meta = write_records(d / "m.csv", testgen::records(1000, 5));
  auto r = invoke({"split", "--metadata", meta.string(), "--protocol", "ava2", "--out", (d / "s.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto f = fields(r.out);
  EXPECT_EQ(f["good"], "100");
  EXPECT_EQ(f["bad"], "100");
  EXPECT_EQ(f["train"], "100");
  EXPECT_EQ(f["test"], "100");
}

TEST(CliSplit, Ava1MarginDropsExactlyTheAmbiguousTrainingRecords) {
  testgen::TempDir d("split1");
  auto rs = testgen::records(2000, 6);
  auto meta = write_records(d / "m.csv", rs).string();
  auto r0 = invoke({"split", "--metadata", meta, "--protocol", "ava1", "--seed", "4", "--out", (d / "s0.csv").string()});
  auto r1 = invoke({"split", "--metadata", meta, "--protocol", "ava1", "--delta", "1", "--seed", "4", "--out",
                 (d / "s1.csv").string()});
  ASSERT_EQ(r0.code, 0);
  ASSERT_EQ(r1.code, 0);
  std::ifstream in(d / "s0.csv");
  auto s0 = ava::read_split(in);
  std::set<std::string> test_ids;
  for (const auto& e : s0.test) test_ids.insert(e.image_id);
  std::size_t ambiguous = 0;
  for (const auto& rec : rs) {
    auto q = oracle::rational_mean(rec);
    auto gap = q.num > 5 * q.den ? q.num - 5 * q.den : 5 * q.den - q.num;
    ambiguous += !test_ids.count(rec.image_id) && gap <= q.den;
  }
  EXPECT_GT(ambiguous, 0u);
  EXPECT_EQ(std::stoul(fields(r1.out)["train"]), std::stoul(fields(r0.out)["train"]) - ambiguous);
  EXPECT_EQ(fields(r1.out)["test"], "200");
}

TEST(CliSplit, MissingMetadataIsUsage) {
  auto r = invoke({"split", "--protocol", "ava1", "--out", "/tmp/never.csv"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--metadata"), std::string::npos);
}

TEST(CliSplit, MalformedMetadataIsDataError) {
  testgen::TempDir d("bad");
  write_text(d / "m.csv", "a,1,2,3\n");
  auto r = invoke({"split", "--metadata", (d / "m.csv").string(), "--protocol", "ava2", "--out", (d / "s").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
  EXPECT_EQ(invoke({"split", "--metadata", (d / "none.csv").string(), "--protocol", "ava2", "--out", "x"}).code, 2);
}

// train / eval ---------------------------------------------------------------

TEST_F(CliCorpus, TrainWritesMetricsRows) {
  auto csv = lines(slurp(model() + ".metrics.csv"));
  ASSERT_EQ(csv.size(), 3u);  // header + max_iter / eval_interval
  EXPECT_EQ(csv[0], "iter,lr,loss,accuracy,wall_ms");
  EXPECT_EQ(csv[1].substr(0, 7), "2,0.01,");
  EXPECT_EQ(csv[2].substr(0, 7), "4,0.01,");
}

TEST_F(CliCorpus, TrainIsDeterministic) {
  auto again = path("again.ilgc");
  auto r = invoke({"train", "--split", split(), "--images", images(), "--config", config(), "--out", again});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(again), slurp(model()));
  EXPECT_EQ(fields(r.out)["train_examples"], "12");
  EXPECT_EQ(fields(r.out)["eval_examples"], "4");
}

TEST_F(CliCorpus, AblationsTrainAndEvaluate) {
  for (std::string v : {"ilgnet-without-inc", "third-googlenet-v1-bn"}) {
    auto out = path(v + ".ilgc");
    auto r = invoke({"train", "--split", split(), "--images", images(), "--config", config(), "--variant", v, "--out", out});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(fields(r.out)["variant"], v);
    auto e = invoke({"eval", "--ckpt", out, "--split", split(), "--images", images(), "--variant", v});
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_EQ(nlohmann::json::parse(e.out)["variant"], v);
  }
}

TEST_F(CliCorpus, TrainFailures) {
  auto r = invoke({"train", "--split", split(), "--images", path("nowhere"), "--config", config(), "--out", path("x")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("missing image"), std::string::npos);

  write_text(*dir / "huge.cfg", std::string(kQuickConfig) + "base_lr=1e30\nmax_iter=20\n");
  r = invoke({"train", "--split", split(), "--images", images(), "--config", path("huge.cfg"), "--out", path("y")});
  EXPECT_EQ(r.code, 3) << r.out << r.err;
  EXPECT_NE(r.err.find("non-finite"), std::string::npos);

  r = invoke({"train", "--split", split(), "--images", images(), "--variant", "vgg", "--out", path("z")});
  EXPECT_EQ(r.code, 1);
}

TEST_F(CliCorpus, EvalReportIsConsistent) {
  for (std::string part : {"train", "test"}) {
    auto r = invoke({"eval", "--ckpt", model(), "--split", split(), "--images", images(), "--partition", part});
    ASSERT_EQ(r.code, 0) << r.err;
    auto j = nlohmann::json::parse(r.out);
    auto c = j["confusion"];
    std::size_t tb = c["true_bad"]["pred_bad"], fg = c["true_bad"]["pred_good"];
    std::size_t fb = c["true_good"]["pred_bad"], tg = c["true_good"]["pred_good"];
    std::size_t n = j["examples"];
    EXPECT_EQ(n, part == "train" ? 12u : 4u);
    EXPECT_EQ(tb + fg + fb + tg, n);
    EXPECT_DOUBLE_EQ(j["accuracy"].get<double>(), double(tb + tg) / double(n));
  }
}

TEST_F(CliCorpus, EvalFailures) {
  auto empty_split = path("empty_test.csv");
  ASSERT_EQ(
      invoke({"split", "--metadata", metadata(), "--protocol", "ava1", "--test-count", "0", "--out", empty_split}).code, 0);
  auto r = invoke({"eval", "--ckpt", model(), "--split", empty_split, "--images", images(), "--partition", "test"});
  EXPECT_EQ(r.code, 2);
  r = invoke({"eval", "--ckpt", model(), "--split", split(), "--images", images(), "--variant", "ilgnet-without-inc"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("variant mismatch"), std::string::npos);
  r = invoke({"eval", "--ckpt", model(), "--split", split(), "--images", images(), "--partition", "middle"});
  EXPECT_EQ(r.code, 1);
}

// classify -------------------------------------------------------------------

TEST_F(CliCorpus, ClassifyRows) {
  auto r = invoke({"classify", "--ckpt", model(), image(0), image(1), image(0)});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], rows[2]);
  for (const auto& row : rows) {
    auto a = row.find(','), b = row.rfind(',');
    double p = std::stod(row.substr(a + 1, b - a - 1));
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_EQ(row.substr(b + 1), p > 0.5 ? "good" : "bad");
  }
}

TEST_F(CliCorpus, ClassifyUndecodableFile) {
  write_text(*dir / "junk.ppm", "P3\n1 1\n255\n0 0 0\n");
  auto r = invoke({"classify", "--ckpt", model(), image(2), path("junk.ppm"), path("absent.ppm")});
  EXPECT_EQ(r.code, 2);
  auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1], path("junk.ppm") + ",,error");
  EXPECT_EQ(rows[2], path("absent.ppm") + ",,error");
  EXPECT_NE(r.err.find("junk.ppm"), std::string::npos);
}

TEST_F(CliCorpus, ZeroedClassifierIsUndecided) {
  auto net = load_checkpoint(model());
  for (auto& p : net.parameters()) {
    if (p.name.starts_with("classifier/")) p.value.fill(0.0f);
  }
  auto zeroed = path("zeroed.ilgc");
  save_checkpoint(net, zeroed);
  auto r = invoke({"classify", "--ckpt", zeroed, image(3)});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(lines(r.out)[0], image(3) + ",0.5,bad");
}

// features -------------------------------------------------------------------

TEST_F(CliCorpus, FeaturesAtFullWidth) {
  auto net = assemble(ArchVariant{VariantKind::ilgnet_inc_v1_bn, 1.0, 64}, 5);
  auto ckpt = path("full.ilgc");
  save_checkpoint(net, ckpt);
  auto a = invoke({"features", "--ckpt", ckpt, "--image", image(4), "--out", path("fa")});
  auto b = invoke({"features", "--ckpt", ckpt, "--image", image(4), "--out", path("fb")});
  ASSERT_EQ(a.code, 0) << a.err;
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(path("fa"))) {
    ++files;
    EXPECT_EQ(slurp(entry.path()), slurp(fs::path(path("fb")) / entry.path().filename())) << entry.path();
  }
  EXPECT_EQ(files, 8u);
  EXPECT_NE(a.out.find("tap=7 shape=(512)"), std::string::npos) << a.out;
  EXPECT_NE(a.out.find("tap=concat shape=(1024)"), std::string::npos) << a.out;
  double density = std::stod(fields(a.out)["activation_density"]);
  EXPECT_GE(density, 0.0);
  EXPECT_LE(density, 1.0);
  EXPECT_EQ(fields(a.out)["activation_density"], fields(b.out)["activation_density"]);
}

TEST_F(CliCorpus, FeaturesAbsentTap) {
  auto third = path("third.ilgc");
  save_checkpoint(assemble(ArchVariant{VariantKind::third_googlenet_v1_bn, 0.125, 32}, 1), third);
  auto r = invoke({"features", "--ckpt", third, "--image", image(0), "--out", path("ft"), "--taps", "concat"});
  EXPECT_EQ(r.code, 2);
  r = invoke({"features", "--ckpt", model(), "--image", image(0), "--out", path("fs"), "--taps", "1,7"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(fs::path(path("fs")) / "tap_1.pgm"));
  EXPECT_FALSE(fs::exists(fs::path(path("fs")) / "tap_2.pgm"));
  EXPECT_EQ(invoke({"features", "--ckpt", model(), "--image", image(0), "--out", path("fs"), "--taps", "9"}).code, 1);
}

TEST(Render, ConstantMapIsMidGray) {
  auto g = render_tap(Tensor32({2, 3, 3}, 4.0f));
  EXPECT_EQ(g.width, 2 * 3u);
  EXPECT_EQ(g.height, 3u);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 6; ++x) EXPECT_EQ(g.pixels[y * 6 + x], 128);
  auto strip = render_tap(Tensor32({4}, std::vector<float>{0.0f, 1.0f, 2.0f, 4.0f}));
  EXPECT_EQ(strip.height, 1u);
  EXPECT_EQ(strip.pixels.front(), 0);
  EXPECT_EQ(strip.pixels.back(), 255);
}

// gradcheck / bench ----------------------------------------------------------

TEST(CliGradcheck, AllOpsPass) {
  auto r = invoke({"gradcheck", "--trials", "3"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(lines(r.out).size(), 9u);
  EXPECT_NE(r.out.find("result=pass"), std::string::npos);
}

TEST(CliGradcheck, SingleOpAndUnknownOp) {
  auto r = invoke({"gradcheck", "--op", "softmax_xent"});
  EXPECT_EQ(r.code, 0);
  auto ls = lines(r.out);
  ASSERT_EQ(ls.size(), 2u);
  EXPECT_EQ(ls[0].substr(0, 16), "op=softmax_xent ");
  EXPECT_EQ(invoke({"gradcheck", "--op", "dropout"}).code, 1);
  EXPECT_EQ(invoke({"gradcheck", "--trials", "0"}).code, 1);
}

TEST(CliBench, OneIteration) {
  auto r = invoke({"bench", "--iters", "1", "--side", "32", "--width", "0.125"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GT(std::stod(fields(r.out)["mean_s_per_image"]), 0.0);
  EXPECT_EQ(invoke({"bench", "--width", "2"}).code, 1);
}

TEST(Cli, NoSubcommandIsUsage) {
  auto r = invoke({});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST(CliProperty, MalformedArgumentsFailCleanly) {
  testgen::Gen g(31);
  const std::vector<std::string> subcommands{"split", "train", "eval", "classify", "features", "gradcheck", "bench",
                                             "synth"};
  const std::vector<std::string> junk{"--bogus", "--trials",    "-3",     "--seed",      "abc",
                                      "--op",    "nope",        "--iters", "--protocol", "ava9",
                                      "--partition", "middle",  "--ckpt", "/nonexistent/x.ilgc", "--out",
                                      "--rule",  "stripes",     "--width", "7",           "--count"};
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<std::string> args{subcommands[g.size(0, subcommands.size() - 1)]};
    std::size_t n = g.size(0, 4);
    for (std::size_t i = 0; i < n; ++i) args.push_back(junk[g.size(0, junk.size() - 1)]);
    args.insert(args.begin() + static_cast<long>(g.size(1, args.size())), "--bogus");  // always malformed
    auto r = invoke(args);
    std::string joined;
    for (const auto& a : args) joined += a + " ";
    EXPECT_TRUE(r.code == 1 || r.code == 2) << joined << "-> " << r.code;
    EXPECT_FALSE(r.err.empty()) << joined;
  }
}

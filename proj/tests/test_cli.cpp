#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "cli.hpp"
#include "patchmeta/errors.hpp"

using namespace patchmeta;
using namespace patchmeta::cli;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(# tiny synthetic setup
gen.base_classes = 6
gen.validation_classes = 2
gen.novel_classes = 5
gen.images_per_class = 10
data.image_size = 12
model.widths = 4,4
model.feature_dim = 6
model.branch_widths = 3,3
model.grid = 3
train.ways = 3
train.queries = 2
train.n_aug = 2
train.epsilon = 20
train.episodes_per_epoch = 2
train.stage1_epochs = 1
train.stage2_epochs = 1
train.stage3_epochs = 1
train.gallery_per_class = 3
train.val_episodes = 0
sgd.emb.batch_size = 8
eval.ways = 3
eval.queries = 2
eval.episodes = 4
eval.topk = 1,2
eval.n_aug = 2
eval.epsilon = 20
)";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("patchmeta_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "patchmeta");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string after(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(prefix, 0) == 0) {
      const std::string rest = line.substr(prefix.size());
      return rest.substr(0, rest.find(' '));
    }
  }
  return {};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& text, const std::string& needle) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) n += line.find(needle) != std::string::npos;
  return n;
}

/// One tiny trained checkpoint shared by the suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(scratch("suite"));
    config_ = new fs::path(*root_ / "tiny.cfg");
    std::ofstream(*config_) << kTinyConfig;
    const Result r = invoke({"train", "--config", config_->string(), "--out", (*root_ / "train").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    ckpt_ = new fs::path(after(r.out, "final checkpoint: "));
  }
  static void TearDownTestSuite() {
    delete root_;
    delete config_;
    delete ckpt_;
  }
  static std::vector<std::string> base(const std::string& cmd, const std::string& out_name) {
    return {cmd, "--config", config_->string(), "--out", (*root_ / out_name).string()};
  }

  static fs::path* root_;
  static fs::path* config_;
  static fs::path* ckpt_;
};

fs::path* Cli::root_ = nullptr;
fs::path* Cli::config_ = nullptr;
fs::path* Cli::ckpt_ = nullptr;

}  // namespace

TEST(Config, EchoRoundTrips) {
  RunConfig a;
  apply_config_text(a, kTinyConfig, "tiny");
  set_field(a, "eval.variant", "baseline_mixup");
  set_field(a, "synth.force_w", "0.25");
  set_field(a, "dump.split", "base");
  const std::string echo = echo_config(a);
  RunConfig b;
  apply_config_text(b, echo, "echo");
  EXPECT_EQ(echo_config(b), echo);
  EXPECT_NE(echo.find("eval.variant = baseline_mixup\n"), std::string::npos);
  EXPECT_EQ(count_lines(echo, " = "), fields().size());
}

TEST(Config, ErrorsNameOriginAndLine) {
  RunConfig c;
  try {
    apply_config_text(c, "train.ways = 3\n\nno.such_key = 1\n", "f.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("f.cfg:3:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(apply_config_text(c, "train.ways 3\n"), ConfigError);
  EXPECT_THROW(set_field(c, "train.ways", "-1"), ConfigError);
  EXPECT_THROW(set_field(c, "eval.augment_at_test", "maybe"), ConfigError);
  EXPECT_THROW(set_field(c, "eval.variant", "bogus"), ConfigError);
  RunConfig g;
  set_field(g, "model.grid", "5");  // 36 is not divisible by 5
  EXPECT_THROW(finalize(g), ConfigError);
}

TEST(Config, ListKeys) {
  const Result r = invoke({"--list-keys", "train"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, echo_config(RunConfig{}));
}

TEST(ExitCodes, ParseAndValueErrors) {
  EXPECT_EQ(invoke({}).code, kConfigError);
  EXPECT_EQ(invoke({"train", "--no-such-flag", "1"}).code, kConfigError);
  EXPECT_EQ(invoke({"frobnicate"}).code, kConfigError);
  const Result bad = invoke({"train", "--train.ways", "many"});
  EXPECT_EQ(bad.code, kConfigError);
  EXPECT_NE(bad.err.find("train.ways"), std::string::npos) << bad.err;
  EXPECT_EQ(invoke({"eval", "--config", "/nonexistent/x.cfg"}).code, kConfigError);
  EXPECT_EQ(invoke({"eval"}).code, kConfigError);  // no checkpoint given
}

TEST_F(Cli, TrainWritesRunArtifactsAndFlagsOverrideConfig) {
  ASSERT_TRUE(fs::exists(*ckpt_));
  const fs::path run = ckpt_->parent_path();
  for (const char* f : {"config.txt", "train_report.json", "FINAL"}) EXPECT_TRUE(fs::exists(run / f)) << f;
  EXPECT_NE(run.filename().string().find("-seed1"), std::string::npos);
  const std::string cfg = slurp(run / "config.txt");
  EXPECT_NE(cfg.find("train.n_aug = 2\n"), std::string::npos);

  auto args = base("train", "override");
  for (const char* a : {"--train.n_aug", "1", "--seed", "7", "--train.stage2_epochs", "0", "--train.stage3_epochs", "0"})
    args.push_back(a);
  const Result r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path run2 = fs::path(after(r.out, "run directory: "));
  const std::string cfg2 = slurp(run2 / "config.txt");
  EXPECT_NE(cfg2.find("train.n_aug = 1\n"), std::string::npos);
  EXPECT_NE(cfg2.find("run.seed = 7\n"), std::string::npos);
  EXPECT_NE(run2.filename().string().find("-seed7"), std::string::npos);
}

TEST_F(Cli, RuntimeAndIntegrityExitCodes) {
  auto missing = base("eval", "missing");
  missing.insert(missing.end(), {"--checkpoint", (*root_ / "absent.ckpt").string()});
  EXPECT_EQ(invoke(missing).code, kRuntimeError);

  const fs::path broken = *root_ / "broken.ckpt";
  std::string bytes = slurp(*ckpt_);
  bytes[bytes.size() / 2] ^= 0x5a;
  std::ofstream(broken, std::ios::binary) << bytes;
  auto corrupt = base("eval", "corrupt");
  corrupt.insert(corrupt.end(), {"--checkpoint", broken.string()});
  const Result c = invoke(corrupt);
  EXPECT_EQ(c.code, kDependencyError) << c.err;

  auto ablate = base("ablate", "nocache");
  ablate.insert(ablate.end(), {"--cache", (*root_ / "empty_cache").string(), "--ablate.naug", ""});
  const Result a = invoke(ablate);
  EXPECT_EQ(a.code, kDependencyError) << a.err;
  EXPECT_NE(a.err.find("--train-missing"), std::string::npos) << a.err;
}

TEST_F(Cli, EvalPrintsSummaryLine) {
  auto args = base("eval", "eval");
  args.insert(args.end(), {"--checkpoint", ckpt_->string(), "--eval.dump_episodes", "true"});
  const Result r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::regex summary(R"((^|\n)variant=full episodes=4 top1=\d\.\d{4}\+-\d\.\d{4} top2=\d\.\d{4}\+-\d\.\d{4}\n)");
  EXPECT_TRUE(std::regex_search(r.out, summary)) << r.out;
  const fs::path run(after(r.out, "run directory: "));
  for (const char* f : {"report.json", "report.tsv", "episodes.tsv", "config.txt"}) EXPECT_TRUE(fs::exists(run / f)) << f;
  // Same seed, same numbers.
  const Result again = invoke(args);
  EXPECT_EQ(after(again.out, "variant=full "), after(r.out, "variant=full "));
  EXPECT_EQ(slurp(run / "report.tsv"), slurp(fs::path(after(again.out, "run directory: ")) / "report.tsv"));
}

TEST_F(Cli, SynthWritesTripletsAndIndex) {
  auto args = base("synth", "synth");
  args.insert(args.end(), {"--checkpoint", ckpt_->string(), "--synth.samples", "3"});
  const Result r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path dir = fs::directory_iterator(*root_ / "synth")->path() / "synth";
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) files += e.is_regular_file();
  EXPECT_EQ(files, 3u * 3u + 1u);
  std::ifstream index(dir / "index.tsv");
  std::string line;
  std::getline(index, line);
  EXPECT_EQ(line, "sample\tclass\tprobe_item\tgallery_index\tgallery_item\tgallery_class\tgrid\tw");
  std::size_t rows = 0;
  while (std::getline(index, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, '\t');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 8u) << line;
    EXPECT_EQ(cells[0], std::to_string(rows));
    EXPECT_EQ(cells[6], "3x3");
    EXPECT_EQ(std::count(cells[7].begin(), cells[7].end(), ','), 8);
    ++rows;
  }
  EXPECT_EQ(rows, 3u);
}

TEST_F(Cli, ForcedWeightOneReproducesTheProbe) {
  for (const char* w : {"1", "0"}) {
    const std::string name = std::string("force") + w;
    auto args = base("synth", name);
    args.insert(args.end(), {"--checkpoint", ckpt_->string(), "--synth.samples", "2", "--force-w", w});
    ASSERT_EQ(invoke(args).code, 0);
    const fs::path dir = fs::directory_iterator(*root_ / name)->path() / "synth";
    const char* src = w[0] == '1' ? "_probe.ppm" : "_gallery.ppm";
    for (int s = 0; s < 2; ++s) {
      EXPECT_EQ(slurp(dir / (std::to_string(s) + "_synth.ppm")), slurp(dir / (std::to_string(s) + src))) << w;
    }
  }
}

TEST_F(Cli, DumpFeaturesWritesCsv) {
  auto args = base("dump-features", "dump");
  args.insert(args.end(), {"--checkpoint", ckpt_->string(), "--dump.max_classes", "2", "--dump.max_items", "3",
                           "--dump.synth_episodes", "1"});
  const Result r = invoke(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path run = fs::directory_iterator(*root_ / "dump")->path();
  const std::string csv = slurp(run / "features.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "id,label,tag,f0,f1,f2,f3,f4,f5");
  // 2x3 items, then one 3-way episode: 3 probes and 3*2 synthesized rows.
  EXPECT_EQ(count_lines(csv, ",probe,"), 3u);
  EXPECT_EQ(count_lines(csv, ",synthesized,"), 6u);
  EXPECT_EQ(count_lines(csv, ","), 1u + 6u + 3u + 6u);
}

TEST_F(Cli, AblateCachesCheckpointsAndListsEveryVariant) {
  const std::string cache = (*root_ / "ablate_cache").string();
  auto args = base("ablate", "ablate");
  args.insert(args.end(), {"--cache", cache, "--train-missing", "--ablate.baselines", "", "--ablate.naug", "0,1",
                           "--ablate.variants",
                           "no_celoss_training,no_protoloss_training,random_pool,no_aug_testing,random_weights,"
                           "gallery_from_support,deform_is_gallery"});
  const Result first = invoke(args);
  ASSERT_EQ(first.code, 0) << first.err;
  const fs::path run1(after(first.out, "run directory: "));
  const std::string table = slurp(run1 / "ablation.tsv");
  EXPECT_EQ(count_lines(table, "\ttop1\t"), 7u) << table;
  EXPECT_TRUE(fs::exists(run1 / "naug.tsv"));
  EXPECT_GT(count_lines(first.out, "training recipe"), 0u) << first.out;

  // Second run: nothing to train, identical tables.
  const Result second = invoke(args);
  ASSERT_EQ(second.code, 0) << second.err;
  EXPECT_EQ(count_lines(second.out, "training recipe"), 0u) << second.out;
  const fs::path run2(after(second.out, "run directory: "));
  EXPECT_EQ(slurp(run2 / "ablation.tsv"), table);
  EXPECT_EQ(slurp(run2 / "naug.tsv"), slurp(run1 / "naug.tsv"));
}

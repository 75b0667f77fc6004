#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "oracles/frozen_values.hpp"
#include "patchmeta/baselines.hpp"
#include "patchmeta/errors.hpp"
#include "patchmeta/eval.hpp"
#include "patchmeta/trainer.hpp"
#include "support.hpp"

using namespace patchmeta;
using namespace testsupport;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  Dataset ds = tiny_dataset();
  Model model = Model::create(tiny_model(ds), 3);
  Gallery gallery = build_gallery(ds, 3, 1);
};

}  // namespace

TEST(Stats, CiMatchesOracle) {
  const std::vector<double> a{0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> b(9, 0.5);
  b.push_back(0.6);
  std::vector<double> c;
  for (int i = 0; i < 600; ++i) c.push_back((i % 7) / 7.0);
  EXPECT_NEAR(ci_half_width(a), oracle::kCi[0], 1e-15);
  EXPECT_NEAR(ci_half_width(b), oracle::kCi[1], 1e-15);
  EXPECT_NEAR(ci_half_width(c), oracle::kCi[2], 1e-15);
  EXPECT_EQ(ci_half_width(std::vector<double>{0.7}), 0.0);
}

TEST(Stats, PairedDifference) {
  const std::vector<double> a{0.5, 0.6, 0.7, 0.8}, b{0.4, 0.6, 0.5, 0.7};
  const PairedDifference d = paired_difference(a, b);
  EXPECT_NEAR(d.mean, 0.1, 1e-12);
  const std::vector<double> diff{0.1, 0.0, 0.2, 0.1};
  EXPECT_NEAR(d.half_width, ci_half_width(diff), 1e-15);
  EXPECT_NEAR(d.upper() - d.lower(), 2 * d.half_width, 1e-15);
}

TEST(Stats, TopkTiesMatchBruteForceOracle) {
  constexpr std::size_t cases = std::size(oracle::kTieExpected);
  for (std::size_t i = 0; i < cases; ++i) {
    const std::span<const double> row(oracle::kTieScores + 5 * i, 5);
    const std::vector<std::size_t> lab{static_cast<std::size_t>(oracle::kTieLabels[i])};
    EXPECT_NEAR(topk_accuracy(row, 5, lab, static_cast<std::size_t>(oracle::kTieK[i])), oracle::kTieExpected[i], 1e-12)
        << "case " << i;
  }
  const std::vector<double> probs{0.7, 0.2, 0.1, 0.1, 0.3, 0.6};
  EXPECT_DOUBLE_EQ(topk_accuracy(probs, 3, std::vector<std::size_t>{0, 0}, 1), 0.5);
  EXPECT_DOUBLE_EQ(topk_accuracy(probs, 3, std::vector<std::size_t>{0, 0}, 3), 1.0);
  EXPECT_THROW(topk_accuracy(probs, 4, std::vector<std::size_t>{0, 0}, 1), ShapeError);
}

TEST(Variants, NamesRoundTrip) {
  EXPECT_EQ(ablation_variants().size(), 7u);
  EXPECT_EQ(baseline_variants().size(), 5u);
  for (const auto& v : ablation_variants()) EXPECT_EQ(VariantSpec::parse(v.name()), v);
  for (const auto& v : baseline_variants()) EXPECT_EQ(VariantSpec::parse(v.name()), v);
  EXPECT_EQ(VariantSpec::parse("grid(5)").grid_k, 5u);
  EXPECT_EQ(VariantSpec::parse("grid5"), (VariantSpec{Variant::grid, 5}));
  EXPECT_EQ((VariantSpec{Variant::grid, 7}).name(), "grid(7)");
  EXPECT_THROW(VariantSpec::parse("bogus"), ConfigError);
  for (auto m : {PoolMode::top_epsilon, PoolMode::random, PoolMode::support})
    EXPECT_EQ(parse_pool_mode(pool_mode_name(m)), m);
}

TEST(Variants, PlansChangeOneKnob) {
  const AugmentPlan full = eval_plan({Variant::full}, true);
  EXPECT_TRUE(full.augment);
  EXPECT_EQ(full.pool, PoolMode::top_epsilon);
  EXPECT_EQ(full.weights, WeightMode::learned);
  EXPECT_FALSE(full.baseline);
  EXPECT_FALSE(eval_plan({Variant::no_aug_testing}, true).augment);
  EXPECT_EQ(eval_plan({Variant::random_pool}, true).pool, PoolMode::random);
  EXPECT_EQ(eval_plan({Variant::gallery_from_support}, true).pool, PoolMode::support);
  EXPECT_EQ(eval_plan({Variant::random_weights}, true).weights, WeightMode::random);
  EXPECT_EQ(eval_plan({Variant::deform_is_gallery}, true).weights, WeightMode::zero);
  EXPECT_EQ(*eval_plan({Variant::baseline_mixup}, true).baseline, BaselineKind::mixup);
  EXPECT_FALSE(eval_plan({Variant::baseline_none}, true).augment);
  EXPECT_FALSE(eval_plan({Variant::full}, false).augment);
}

TEST(MetaTest, ReportShapeAndBounds) {
  Fixture f;
  const EvalReport r = meta_test(f.model, f.ds, f.gallery, tiny_eval());
  EXPECT_EQ(r.topk, (std::vector<std::size_t>{1, 2}));
  ASSERT_EQ(r.per_episode.size(), 2u);
  EXPECT_EQ(r.per_episode[0].size(), 6u);
  for (std::size_t k = 0; k < 2; ++k) {
    for (double v : r.per_episode[k]) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_NEAR(r.mean[k], std::accumulate(r.per_episode[k].begin(), r.per_episode[k].end(), 0.0) / 6.0, 1e-15);
    EXPECT_NEAR(r.half_width[k], ci_half_width(r.per_episode[k]), 1e-15);
  }
  EXPECT_GE(r.mean[1], r.mean[0]);
  EXPECT_EQ(r.config.at("gallery_hash"), std::to_string(f.gallery.hash()));
  EXPECT_EQ(r.slot(2), 1u);
  EXPECT_FALSE(r.slot(5));
}

TEST(MetaTest, TopkAboveWaysIsOmittedWithNotice) {
  Fixture f;
  EvalConfig e = tiny_eval();
  e.topk = {1, 5};
  const EvalReport r = meta_test(f.model, f.ds, f.gallery, e);
  EXPECT_EQ(r.topk, (std::vector<std::size_t>{1}));
  ASSERT_EQ(r.notices.size(), 1u);
  EXPECT_NE(r.notices[0].find("top-5"), std::string::npos);
  EXPECT_EQ(summary_line(r).find("top5"), std::string::npos);
}

TEST(MetaTest, IndependentOfThreadsAndOrder) {
  Fixture f;
  EvalConfig e = tiny_eval();
  e.episodes = 10;
  const EvalReport base = meta_test(f.model, f.ds, f.gallery, e);
  e.threads = 3;
  const EvalReport threaded = meta_test(f.model, f.ds, f.gallery, e);
  e.shuffle_order = true;
  const EvalReport shuffled = meta_test(f.model, f.ds, f.gallery, e);
  EXPECT_EQ(base.per_episode, threaded.per_episode);
  EXPECT_EQ(base.per_episode, shuffled.per_episode);
  EXPECT_EQ(base.mean, shuffled.mean);
}

TEST(MetaTest, SameSeedSameEpisodesAcrossModels) {
  // Deform-is-gallery vs. no augmentation on one seed share episodes; a w=1
  // synthesis (the probe itself) leaves the prototypes unchanged.
  Fixture f;
  EvalConfig e = tiny_eval();
  e.variant = {Variant::no_aug_testing};
  const EvalReport plain = meta_test(f.model, f.ds, f.gallery, e);
  Model other = Model::create(tiny_model(f.ds), 3);
  for (auto& v : other.params.get("def.head.bias").mutable_data()) v = 1.0;
  e.variant = {Variant::full};
  const EvalReport ones = meta_test(other, f.ds, f.gallery, e);
  for (std::size_t i = 0; i < plain.per_episode[0].size(); ++i)
    EXPECT_NEAR(ones.per_episode[0][i], plain.per_episode[0][i], 1e-12);
}

TEST(MetaTest, EveryVariantRuns) {
  Fixture f;
  EvalConfig e = tiny_eval();
  e.episodes = 2;
  std::vector<VariantSpec> all = ablation_variants();
  for (const auto& b : baseline_variants()) all.push_back(b);
  all.push_back({Variant::full});
  for (const auto& v : all) {
    e.variant = v;
    const EvalReport r = meta_test(f.model, f.ds, f.gallery, e);
    EXPECT_EQ(r.variant, v.name());
    EXPECT_EQ(summary_line(r).rfind("variant=" + v.name() + " episodes=2 top1=", 0), 0u) << summary_line(r);
  }
}

TEST(MetaTest, ZeroAugmentationEqualsNoAugmentation) {
  Fixture f;
  EvalConfig e = tiny_eval();
  e.n_aug = 0;
  const EvalReport zero = meta_test(f.model, f.ds, f.gallery, e);
  e.n_aug = 2;
  e.variant = {Variant::baseline_none};
  const EvalReport none = meta_test(f.model, f.ds, f.gallery, e);
  EXPECT_EQ(zero.per_episode, none.per_episode);
}

TEST(MetaTest, ValidationAndCapacity) {
  Fixture f;
  EvalConfig e = tiny_eval();
  e.ways = 6;
  EXPECT_THROW(meta_test(f.model, f.ds, f.gallery, e), CapacityError);
  e = tiny_eval();
  e.topk = {};
  EXPECT_THROW(meta_test(f.model, f.ds, f.gallery, e), ConfigError);
  e = tiny_eval();
  EXPECT_THROW(meta_test(f.model, f.ds, Gallery{}, e), CapacityError);
  e.variant = {Variant::gallery_from_support};
  EXPECT_NO_THROW(meta_test(f.model, f.ds, Gallery{}, e));
}

TEST(Reports, SummaryJsonTsvDump) {
  Fixture f;
  EvalReport r;
  r.variant = "full";
  r.topk = {1, 5};
  r.per_episode = {{0.4, 0.5}, {0.9, 1.0}};
  r.mean = {0.45212, 0.95};
  r.half_width = {0.01104, 0.0};
  EXPECT_EQ(summary_line(r), "variant=full episodes=2 top1=0.4521+-0.0110 top5=0.9500+-0.0000");
  const fs::path dir = fs::temp_directory_path() / "patchmeta_test_reports";
  fs::remove_all(dir);
  write_report_json(dir / "r.json", r);
  write_report_tsv(dir / "r.tsv", r);
  write_episode_dump(dir / "e.tsv", r);
  std::ifstream tsv(dir / "e.tsv");
  std::string line;
  std::getline(tsv, line);
  EXPECT_EQ(line, "episode\ttop1\ttop5");
  std::size_t rows = 0;
  while (std::getline(tsv, line)) ++rows;
  EXPECT_EQ(rows, 2u);
  std::ifstream js(dir / "r.json");
  const std::string text((std::istreambuf_iterator<char>(js)), {});
  EXPECT_NE(text.find("\"variant\": \"full\""), std::string::npos);
}

// ---- classic augmentations ----------------------------------------------------

TEST(Baselines, FlipIsAnInvolution) {
  const Tensor img = seq_tensor({3, 5, 7}, 0.3, 0.1);
  const Tensor f = flip_horizontal(img);
  EXPECT_EQ(f[0], img[6]);
  const Tensor ff = flip_horizontal(f);
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(ff[i], img[i]);
}

TEST(Baselines, PixelNoiseSigma) {
  Rng rng = make_rng(5);
  const Tensor img = Tensor::full({3, 96, 96}, 0.5);
  const Tensor n = add_pixel_noise(img, 10.0 / 255.0, rng);
  double ss = 0, s = 0;
  for (std::size_t i = 0; i < n.numel(); ++i) {
    s += n[i] - 0.5;
    ss += (n[i] - 0.5) * (n[i] - 0.5);
  }
  const double m = s / n.numel();
  const double sd = std::sqrt(ss / n.numel() - m * m) * 255.0;
  EXPECT_NEAR(sd, 10.0, 1.0);
  const Tensor sat = add_pixel_noise(Tensor::full({1, 4, 4}, 1.0), 0.5, rng);
  for (double v : sat.data()) EXPECT_LE(v, 1.0);
}

TEST(Baselines, FeatureNoiseSigma) {
  Rng rng = make_rng(6);
  const Tensor f = add_feature_noise(Tensor::zeros({100, 100}), 0.3, rng);
  double ss = 0;
  for (double v : f.data()) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / 10000.0), 0.3, 0.03);
}

TEST(Baselines, MixupMatchesOracleBytes) {
  std::vector<double> a(48), b(48);
  const auto sa = seq(48, 0.9, 0.0), sb = seq(48, 0.35, 2.0);
  for (std::size_t i = 0; i < 48; ++i) {
    a[i] = std::round(std::clamp(0.5 + 0.5 * sa[i], 0.0, 1.0) * 255) / 255;
    b[i] = std::round(std::clamp(0.5 + 0.5 * sb[i], 0.0, 1.0) * 255) / 255;
  }
  const Tensor m = mixup_images(Tensor::from({3, 4, 4}, a), Tensor::from({3, 4, 4}, b), 0.5);
  const auto bytes = quantize(m);
  for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(bytes[i], oracle::kMixupBytes[i]) << i;
  EXPECT_EQ(mixup_labels(0.3), (std::vector<double>{0.3, 0.7}));
}

TEST(Baselines, BetaSamplesInUnitIntervalWithMeanHalf) {
  Rng rng = make_rng(8);
  double s = 0;
  for (int i = 0; i < 4000; ++i) {
    const double x = sample_beta(0.4, rng);
    ASSERT_GE(x, 0.0);
    ASSERT_LE(x, 1.0);
    s += x;
  }
  EXPECT_NEAR(s / 4000, 0.5, 0.02);
  EXPECT_THROW(sample_beta(0.0, rng), ConfigError);
  EXPECT_THROW(apply_baseline_augment(BaselineKind::mixup, Tensor::zeros({1, 2, 2}), rng), UsageError);
  for (auto k : {BaselineKind::flip, BaselineKind::noise_pixel, BaselineKind::noise_feature, BaselineKind::mixup})
    EXPECT_EQ(parse_baseline(baseline_name(k)), k);
}

// ---- ablation orchestration ---------------------------------------------------

TEST(Ablation, MissingCheckpointsListedThenTrained) {
  const Dataset ds = tiny_dataset();
  const fs::path dir = fs::temp_directory_path() / "patchmeta_test_ablation";
  fs::remove_all(dir);
  CheckpointCache cache{dir, false, {}};
  EvalConfig e = tiny_eval();
  e.episodes = 2;
  const auto variants = ablation_variants();
  try {
    run_ablation_matrix(tiny_train(), tiny_model(ds), e, ds, variants, {1}, cache);
    FAIL();
  } catch (const DependencyError& err) {
    for (const auto& v : variants) EXPECT_NE(std::string(err.what()).find(v.name()), std::string::npos) << v.name();
  }
  cache.train_missing = true;
  const auto rows = run_ablation_matrix(tiny_train(), tiny_model(ds), e, ds, variants, {1}, cache);
  EXPECT_EQ(rows.size(), 7u);
  // Distinct training recipes: full, no_celoss, no_protoloss, random_pool, gallery_from_support.
  std::size_t files = 0;
  for (const auto& p : fs::directory_iterator(dir)) files += p.path().extension() == ".ckpt";
  EXPECT_EQ(files, 5u);
  write_ablation_table(dir / "ablation.tsv", rows);
  std::ifstream is(dir / "ablation.tsv");
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) ++n;
  EXPECT_EQ(n, 1u + 7u * 2u);
}

TEST(Ablation, SweepZeroMatchesBaselineNone) {
  const Dataset ds = tiny_dataset();
  const fs::path dir = fs::temp_directory_path() / "patchmeta_test_sweep";
  fs::remove_all(dir);
  CheckpointCache cache{dir, true, {}};
  EvalConfig e = tiny_eval();
  const auto pts = sweep_naug(tiny_train(), tiny_model(ds), e, ds, {0, 2}, cache);
  ASSERT_EQ(pts.size(), 2u);
  const auto rows = run_ablation_matrix(tiny_train(), tiny_model(ds), e, ds, {{Variant::baseline_none}}, {1}, cache);
  EXPECT_EQ(pts[0].report.per_episode, rows[0].report.per_episode);
}

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "patchmeta/data.hpp"
#include "patchmeta/errors.hpp"
#include "support.hpp"

using namespace patchmeta;
using namespace testsupport;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("patchmeta_test_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Synthetic, SplitsAreDisjointAndSized) {
  const SyntheticConfig d = synthetic_defaults(60, 60, 36, 7);
  EXPECT_EQ(d.base_classes, 40u);
  EXPECT_EQ(d.validation_classes, 8u);
  EXPECT_EQ(d.novel_classes, 12u);
  const Dataset ds = tiny_dataset();
  EXPECT_EQ(ds.classes(Split::base).size(), 6u);
  EXPECT_EQ(ds.classes(Split::validation).size(), 2u);
  EXPECT_EQ(ds.classes(Split::novel).size(), 5u);
  std::set<std::string> names;
  for (std::size_t c = 0; c < ds.class_count(); ++c) names.insert(ds.class_info(static_cast<int>(c)).name);
  EXPECT_EQ(names.size(), ds.class_count());
  for (const auto& it : ds.items()) {
    EXPECT_EQ(it.image.shape(), (Shape{3, 12, 12}));
    for (double v : it.image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_EQ(ds.size(), 13u * 12u);
}

TEST(Synthetic, DeterministicPerSeed) {
  EXPECT_EQ(tiny_dataset(12, 3).hash(), tiny_dataset(12, 3).hash());
  EXPECT_NE(tiny_dataset(12, 3).hash(), tiny_dataset(12, 4).hash());
}

TEST(Synthetic, RejectsBadConfigs) {
  SyntheticConfig c;
  c.base_classes = 3;
  c.validation_classes = 1;
  c.novel_classes = 2;
  EXPECT_THROW(generate_synthetic(c), ConfigError);
  c = {};
  c.image_size = 35;
  EXPECT_THROW(generate_synthetic(c, 3), ConfigError);
}

TEST(Synthetic, ClassesAreDistinguishableByMeanColour) {
  // Same-class images are closer on average than different-class images.
  const Dataset ds = tiny_dataset();
  auto mean_rgb = [&](std::size_t i) {
    std::vector<double> m(3, 0.0);
    const auto v = ds.item(i).image.data();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 144; ++p) m[c] += v[c * 144 + p] / 144.0;
    return m;
  };
  double same = 0, diff = 0;
  std::size_t ns = 0, nd = 0;
  for (std::size_t a = 0; a < ds.size(); a += 5)
    for (std::size_t b = a + 1; b < ds.size(); b += 7) {
      const auto x = mean_rgb(a), y = mean_rgb(b);
      double d = 0;
      for (int c = 0; c < 3; ++c) d += (x[c] - y[c]) * (x[c] - y[c]);
      if (ds.item(a).class_id == ds.item(b).class_id) same += d, ++ns;
      else diff += d, ++nd;
    }
  ASSERT_GT(ns, 0u);
  EXPECT_LT(same / ns, diff / nd);
}

TEST(Episodes, StructureAndDisjointness) {
  const Dataset ds = tiny_dataset();
  Rng rng = make_rng(1);
  for (int t = 0; t < 50; ++t) {
    const Episode e = sample_episode(ds, Split::novel, 5, 2, 3, rng);
    ASSERT_EQ(e.classes.size(), 5u);
    EXPECT_EQ(std::set<int>(e.classes.begin(), e.classes.end()).size(), 5u);
    EXPECT_EQ(e.support.size(), 10u);
    EXPECT_EQ(e.query.size(), 15u);
    std::set<std::size_t> seen;
    for (const auto* part : {&e.support, &e.query}) {
      for (const auto& it : *part) {
        EXPECT_TRUE(seen.insert(it.item).second);
        EXPECT_EQ(ds.item(it.item).class_id, it.class_id);
        EXPECT_EQ(e.classes[it.way], it.class_id);
        EXPECT_EQ(ds.class_info(it.class_id).split, Split::novel);
      }
    }
  }
}

TEST(Episodes, DeterministicAndCapacityChecked) {
  const Dataset ds = tiny_dataset();
  Rng a = make_rng(9), b = make_rng(9);
  const Episode x = sample_episode(ds, Split::base, 3, 1, 2, a);
  const Episode y = sample_episode(ds, Split::base, 3, 1, 2, b);
  EXPECT_EQ(x.classes, y.classes);
  for (std::size_t i = 0; i < x.query.size(); ++i) EXPECT_EQ(x.query[i].item, y.query[i].item);
  EXPECT_THROW(sample_episode(ds, Split::novel, 6, 1, 1, a), CapacityError);
  EXPECT_THROW(sample_episode(ds, Split::novel, 2, 6, 7, a), CapacityError);
  EXPECT_THROW(sample_episode(ds, Split::novel, 0, 1, 1, a), ConfigError);
}

TEST(Gallery, DrawsFromBaseOnlyWithoutReplacement) {
  const Dataset ds = tiny_dataset();
  const Gallery g = build_gallery(ds, 4, 5);
  EXPECT_EQ(g.size(), 24u);
  std::set<std::size_t> seen;
  for (const auto& it : g.items()) {
    EXPECT_EQ(ds.class_info(it.origin_class).split, Split::base);
    EXPECT_TRUE(seen.insert(it.item).second);
  }
  EXPECT_EQ(g.hash(), build_gallery(ds, 4, 5).hash());
  EXPECT_NE(g.hash(), build_gallery(ds, 4, 6).hash());
  EXPECT_THROW(build_gallery(ds, 13, 5), CapacityError);
}

TEST(Pool, SizeRule) {
  EXPECT_EQ(pool_size(400, 2.0), 8u);
  EXPECT_EQ(pool_size(10, 2.0), 1u);
  EXPECT_EQ(pool_size(101, 2.0), 3u);
  EXPECT_EQ(pool_size(7, 100.0), 7u);
  EXPECT_THROW(pool_size(10, 0.0), ConfigError);
  EXPECT_THROW(pool_size(10, 101.0), ConfigError);
}

TEST(Pool, TopScoresWithLowerIndexTieBreak) {
  const std::vector<double> s{0.1, 0.9, 0.5, 0.9, 0.2, 0.5, 0.0, 0.3, 0.4, 0.6};
  EXPECT_EQ(select_class_pool(s, 40.0), (std::vector<std::size_t>{1, 3, 9, 2}));
  EXPECT_EQ(select_class_pool(s, 1.0), (std::vector<std::size_t>{1}));
  const std::vector<double> flat(6, 0.25);
  EXPECT_EQ(select_class_pool(flat, 50.0), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(Pool, ScorerForm) {
  const Dataset ds = tiny_dataset();
  const Gallery g = build_gallery(ds, 2, 1);
  const int target = g[5].origin_class;
  const auto pool = select_class_pool(
      g, [&](const Tensor& img) { return img.data()[0] == g[5].image.data()[0] ? 1.0 : 0.0; }, 1.0);
  ASSERT_EQ(pool.size(), 1u);
  EXPECT_EQ(g[pool[0]].origin_class, target);
}

TEST(Raster, PpmRoundTripIsQuantized) {
  const fs::path dir = scratch("ppm");
  const Dataset ds = tiny_dataset(2);
  const Tensor& img = ds.item(0).image;
  write_ppm(dir / "a.ppm", img);
  const Tensor back = read_ppm(dir / "a.ppm");
  EXPECT_EQ(back.shape(), img.shape());
  EXPECT_EQ(quantize(back), quantize(img));
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(back[i], img[i], 0.5 / 255 + 1e-12);
  std::ofstream(dir / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(read_ppm(dir / "bad.ppm"), IoError);
  EXPECT_THROW(read_ppm(dir / "missing.ppm"), IoError);
}

TEST(Raster, ResizeIdentityAndConstant) {
  const Dataset ds = tiny_dataset(1);
  const Tensor& img = ds.item(0).image;
  const Tensor same = resize_bilinear(img, 12, 12);
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(same[i], img[i], 1e-12);
  const Tensor big = resize_bilinear(Tensor::full({3, 4, 4}, 0.3), 9, 7);
  EXPECT_EQ(big.shape(), (Shape{3, 9, 7}));
  for (double v : big.data()) EXPECT_NEAR(v, 0.3, 1e-12);
}

TEST(Folder, ExportIngestRoundTrip) {
  const fs::path dir = scratch("folder");
  const Dataset ds = tiny_dataset(3);
  export_folder(ds, dir);
  IngestOptions opt;
  opt.geometry = ds.geometry();
  const Dataset back = ingest_folder(dir, dir / "manifest.txt", opt);
  ASSERT_EQ(back.class_count(), ds.class_count());
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t c = 0; c < ds.class_count(); ++c) {
    EXPECT_EQ(back.class_info(static_cast<int>(c)).name, ds.class_info(static_cast<int>(c)).name);
    EXPECT_EQ(back.class_info(static_cast<int>(c)).split, ds.class_info(static_cast<int>(c)).split);
  }
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(quantize(back.item(i).image), quantize(ds.item(i).image));
}

TEST(Folder, UnreadableImagesSkippedUnlessStrict) {
  const fs::path dir = scratch("strict");
  const Dataset ds = tiny_dataset(2);
  export_folder(ds, dir);
  const std::string cls = ds.class_info(0).name;
  std::ofstream(dir / cls / "zz_broken.ppm") << "garbage";
  IngestOptions opt;
  opt.geometry = ds.geometry();
  EXPECT_EQ(ingest_folder(dir, dir / "manifest.txt", opt).size(), ds.size());
  opt.strict = true;
  EXPECT_THROW(ingest_folder(dir, dir / "manifest.txt", opt), IoError);
}

TEST(Folder, ManifestErrors) {
  const fs::path dir = scratch("manifest");
  std::ofstream(dir / "m.txt") << "# comment\nalpha base\nbeta nowhere\n";
  try {
    read_manifest(dir / "m.txt");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  std::ofstream(dir / "m2.txt") << "alpha base\n";
  IngestOptions opt;
  EXPECT_THROW(ingest_folder(dir, dir / "m2.txt", opt), IoError);
}

TEST(Dataset, DivisibilityAndBaseIndex) {
  const Dataset ds = tiny_dataset(1);
  EXPECT_NO_THROW(ds.require_divisible(3, 3));
  EXPECT_NO_THROW(ds.require_divisible(12, 12));
  EXPECT_THROW(ds.require_divisible(5, 5), ConfigError);
  const auto base = ds.classes(Split::base);
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_EQ(ds.base_index(base[i]), i);
  EXPECT_THROW(ds.base_index(ds.classes(Split::novel)[0]), UsageError);
}

TEST(Sampling, WithoutReplacement) {
  Rng rng = make_rng(3);
  const auto v = sample_without_replacement({4, 5, 6, 7, 8}, 5, rng);
  EXPECT_EQ(std::set<std::size_t>(v.begin(), v.end()).size(), 5u);
  EXPECT_THROW(sample_without_replacement({1, 2}, 3, rng), CapacityError);
  EXPECT_THROW(uniform_index(0, rng), CapacityError);
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "patchmeta/rng.hpp"
#include "patchmeta/tensor.hpp"

namespace patchmeta {

enum class Split { base, validation, novel };

const char* split_name(Split s);
Split parse_split(const std::string& name);

/// Image geometry shared by every item of a dataset. Images are [C,H,W]
/// tensors with values in [0,1].
struct ImageGeometry {
  std::size_t channels = 3;
  std::size_t height = 36;
  std::size_t width = 36;

  Shape shape() const { return {channels, height, width}; }
  bool operator==(const ImageGeometry&) const = default;
};

struct Item {
  Tensor image;
  int class_id = 0;
};

struct ClassInfo {
  std::string name;
  Split split = Split::base;
};

class Dataset {
 public:
  explicit Dataset(ImageGeometry geometry) : geometry_(geometry) {}

  int add_class(std::string name, Split split);
  void add_item(Tensor image, int class_id);

  const ImageGeometry& geometry() const { return geometry_; }
  const std::vector<Item>& items() const { return items_; }
  const Item& item(std::size_t i) const { return items_.at(i); }
  std::size_t size() const { return items_.size(); }

  std::size_t class_count() const { return classes_.size(); }
  const ClassInfo& class_info(int class_id) const { return classes_.at(static_cast<std::size_t>(class_id)); }
  /// Class ids of a split, ascending.
  std::vector<int> classes(Split split) const;
  /// Item indices of a class, ascending.
  const std::vector<std::size_t>& items_of(int class_id) const;
  /// Position of a base class among the base classes (auxiliary-head index).
  std::size_t base_index(int class_id) const;

  /// Throws ConfigError unless H % rows == 0 and W % cols == 0.
  void require_divisible(std::size_t rows, std::size_t cols) const;

  std::uint64_t hash() const;

 private:
  ImageGeometry geometry_;
  std::vector<Item> items_;
  std::vector<ClassInfo> classes_;
  std::vector<std::vector<std::size_t>> by_class_;
};

// ---- synthetic generator ---------------------------------------------------

struct SyntheticConfig {
  std::size_t base_classes = 40;
  std::size_t validation_classes = 8;
  std::size_t novel_classes = 12;
  std::size_t images_per_class = 60;
  std::size_t image_size = 36;
  std::uint64_t seed = 7;
  bool jitter = true;
  /// Per-pixel background noise std (jitter only).
  double noise = 0.05;
  /// Max center offset as a fraction of the image side (jitter only).
  double position_jitter = 0.14;
  double scale_jitter = 0.2;
  double rotation_jitter_deg = 25.0;
  double hue_jitter_deg = 15.0;

  std::size_t total_classes() const { return base_classes + validation_classes + novel_classes; }
};

/// Splits n classes 2/3 : 2/15 : rest into base / validation / novel
/// (60 -> 40/8/12).
SyntheticConfig synthetic_defaults(std::size_t n_classes, std::size_t images_per_class,
                                   std::size_t image_size, std::uint64_t seed);

/// Each class is a parametric renderer (shape family x fill texture x hue
/// band); images add position / scale / rotation / hue / background jitter.
Dataset generate_synthetic(const SyntheticConfig& cfg, std::size_t grid = 3);

// ---- raster I/O and folder ingestion ----------------------------------------

/// create_directories that raises IoError instead of filesystem_error.
void ensure_directory(const std::filesystem::path& dir);
/// ensure_directory on the parent of `path`, if it has one.
void ensure_parent(const std::filesystem::path& path);

/// Binary PPM (P6, maxval 255). Values are clamped to [0,1] and rounded.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
/// Returns a [3,H,W] tensor in [0,1].
Tensor read_ppm(const std::filesystem::path& path);
/// 8-bit quantization used for every raster written by the tools.
std::vector<std::uint8_t> quantize(const Tensor& image);
/// Bilinear resize of a [C,H,W] image.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

/// `<class_name> <base|validation|novel>` per line; '#' starts a comment.
std::vector<std::pair<std::string, Split>> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Dataset& dataset);

struct IngestOptions {
  ImageGeometry geometry;
  /// Fail on an unreadable image instead of skipping it with a warning.
  bool strict = false;
};

/// Directory-per-class layout of .ppm files; only manifest classes are read.
Dataset ingest_folder(const std::filesystem::path& root, const std::filesystem::path& manifest,
                      const IngestOptions& options);
/// Writes `root/<class>/<index>.ppm` plus `root/manifest.txt`.
void export_folder(const Dataset& dataset, const std::filesystem::path& root);

// ---- episodes ----------------------------------------------------------------

struct EpisodeItem {
  std::size_t item = 0;  // dataset index
  int class_id = 0;
  std::size_t way = 0;   // position of class_id in Episode::classes
};

struct Episode {
  std::vector<int> classes;
  std::vector<EpisodeItem> support;
  std::vector<EpisodeItem> query;
  std::size_t shots = 0;
  std::size_t queries = 0;
};

/// N classes of `split` without replacement; m + q items per class without
/// replacement, the first m forming the support set.
Episode sample_episode(const Dataset& dataset, Split split, std::size_t ways, std::size_t shots,
                       std::size_t queries, Rng& rng);

/// Uniform index in [0, n).
std::size_t uniform_index(std::size_t n, Rng& rng);
/// First k entries of a seeded Fisher-Yates shuffle of `pool`.
std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k, Rng& rng);

// ---- gallery -------------------------------------------------------------------

struct GalleryItem {
  Tensor image;
  int origin_class = 0;
  std::size_t item = 0;
};

class Gallery {
 public:
  Gallery() = default;
  Gallery(std::vector<GalleryItem> items, std::uint64_t seed) : items_(std::move(items)), seed_(seed) {}

  const std::vector<GalleryItem>& items() const { return items_; }
  const GalleryItem& operator[](std::size_t i) const { return items_.at(i); }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t hash() const;

 private:
  std::vector<GalleryItem> items_;
  std::uint64_t seed_ = 0;
};

/// per_class images from every base class, without replacement.
Gallery build_gallery(const Dataset& dataset, std::size_t per_class, std::uint64_t seed);

/// max(1, ceil(epsilon_percent / 100 * gallery_size)).
std::size_t pool_size(std::size_t gallery_size, double epsilon_percent);

/// Indices of the pool_size highest scores; ties go to the lower index.
/// The result is ordered by descending score.
std::vector<std::size_t> select_class_pool(std::span<const double> scores, double epsilon_percent);

/// Scorer form: `scorer(image)` returns a probability for class_id.
std::vector<std::size_t> select_class_pool(const Gallery& gallery,
                                           const std::function<double(const Tensor&)>& scorer,
                                           double epsilon_percent);

/// Stacks [C,H,W] images into one [B,C,H,W] batch (untracked copy).
Tensor stack_images(std::span<const Tensor> images);

}  // namespace patchmeta

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchmeta/baselines.hpp"
#include "patchmeta/data.hpp"
#include "patchmeta/deform.hpp"
#include "patchmeta/model.hpp"

namespace patchmeta {

/// Ablation / baseline selector. Each value changes exactly one knob of the
/// full model, either at training time, at evaluation time, or both.
enum class Variant {
  full,
  no_celoss_training,
  no_protoloss_training,
  random_pool,
  no_aug_testing,
  random_weights,
  gallery_from_support,
  deform_is_gallery,
  grid,
  pixel_level,
  baseline_flip,
  baseline_noise_pixel,
  baseline_noise_feature,
  baseline_mixup,
  baseline_none,
};

struct VariantSpec {
  Variant kind = Variant::full;
  /// Patch grid side for Variant::grid.
  std::size_t grid_k = 3;

  /// Stable label: "full", "random_weights", "grid(5)", ...
  std::string name() const;
  static VariantSpec parse(const std::string& text);
  bool operator==(const VariantSpec&) const = default;
};

/// The seven ablations of the full model, in canonical order.
std::vector<VariantSpec> ablation_variants();
std::vector<VariantSpec> baseline_variants();

/// Source of gallery pools for each episode class.
enum class PoolMode {
  top_epsilon,  // highest prototype-classifier probability
  random,       // whole gallery, no prediction
  support,      // the episode's own support set
};

const char* pool_mode_name(PoolMode m);
PoolMode parse_pool_mode(const std::string& s);

/// Evaluation-time knobs a variant resolves to.
struct AugmentPlan {
  bool augment = true;
  PoolMode pool = PoolMode::top_epsilon;
  WeightMode weights = WeightMode::learned;
  std::optional<BaselineKind> baseline;
};

AugmentPlan eval_plan(const VariantSpec& v, bool augment_at_test);

struct EvalConfig {
  std::size_t ways = 5;
  std::size_t shots = 1;
  std::size_t queries = 15;
  std::size_t episodes = 600;
  std::vector<std::size_t> topk{1, 5};
  bool augment_at_test = true;
  std::size_t n_aug = 8;
  double epsilon = 2.0;
  VariantSpec variant;
  Split split = Split::novel;
  std::uint64_t seed = 1;
  /// Worker threads; results never depend on this value.
  std::size_t threads = 1;
  /// Process episodes in a seeded permuted order (aggregate is unchanged).
  bool shuffle_order = false;
  BaselineParams baseline;

  void validate() const;
};

struct EvalReport {
  std::string variant;
  std::vector<std::size_t> topk;
  /// per_episode[k][e]: top-topk[k] accuracy of episode e.
  std::vector<std::vector<double>> per_episode;
  std::vector<double> mean;
  std::vector<double> half_width;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  std::vector<std::string> notices;

  /// Index of top-k entry, or nullopt if not reported.
  std::optional<std::size_t> slot(std::size_t k) const;
};

/// 1.96 * sample std / sqrt(n); zero for n < 2.
double ci_half_width(std::span<const double> values);

struct PairedDifference {
  double mean = 0.0;
  double half_width = 0.0;
  double lower() const { return mean - half_width; }
  double upper() const { return mean + half_width; }
};

/// Mean and 95% CI of a[i] - b[i].
PairedDifference paired_difference(std::span<const double> a, std::span<const double> b);

/// Share of queries whose true class is within the top-k probabilities.
/// Ties are credited fractionally (expected hit under a uniform tie-break).
double topk_accuracy(std::span<const double> probs, std::size_t ways, std::span<const std::size_t> labels,
                     std::size_t k);

/// Meta-testing: per episode, build the (optionally augmented) support set,
/// prototypes, and classify the queries. Episode e draws its classes from
/// stream 2e and its augmentation from stream 2e+1 of cfg.seed, so two
/// models evaluated with one seed see identical episodes.
EvalReport meta_test(const Model& model, const Dataset& dataset, const Gallery& gallery, const EvalConfig& cfg);

/// `variant=full episodes=600 top1=0.4521+-0.0110 top5=...`
std::string summary_line(const EvalReport& report);
void write_report_json(const std::filesystem::path& path, const EvalReport& report);
void write_report_tsv(const std::filesystem::path& path, const EvalReport& report);
/// One row per episode: episode, top1, top5, ...
void write_episode_dump(const std::filesystem::path& path, const EvalReport& report);

}  // namespace patchmeta

#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "patchmeta/data.hpp"
#include "patchmeta/eval.hpp"
#include "patchmeta/model.hpp"
#include "patchmeta/trainer.hpp"

namespace patchmeta::cli {

/// Everything a run needs. Every field has a default; values come from a
/// flat `section.key = value` file, then `--section.key value` flags.
struct RunConfig {
  // dataset source
  std::string data_source = "synthetic";  // synthetic | folder
  std::filesystem::path data_root;
  std::filesystem::path data_manifest;
  bool data_strict = false;
  std::size_t image_size = 36;
  SyntheticConfig gen;

  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  std::uint64_t seed = 1;
  std::filesystem::path out;
  std::filesystem::path cache;
  std::filesystem::path checkpoint;
  bool dump_episodes = false;

  // synth
  std::size_t synth_samples = 8;
  std::string synth_force_w;  // empty: learned weights

  // ablate
  std::string ablate_variants = "full,no_celoss_training,no_protoloss_training,random_pool,no_aug_testing,"
                                "random_weights,gallery_from_support,deform_is_gallery";
  std::string ablate_baselines = "baseline_none,baseline_flip,baseline_noise_pixel,baseline_noise_feature,baseline_mixup";
  std::string ablate_seeds = "1";
  std::string ablate_grid;
  std::string ablate_naug = "0,2,4,8";
  bool train_missing = false;

  // dump-features
  Split dump_split = Split::novel;
  std::size_t dump_max_classes = 0;
  std::size_t dump_max_items = 0;
  std::size_t dump_synth_episodes = 0;

  RunConfig();
};

struct Field {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

/// All configurable keys in echo order.
const std::vector<Field>& fields();

/// `key = value` lines for every field.
std::string echo_config(const RunConfig& cfg);
/// Applies a config text on top of `cfg`. ConfigError names the key/line.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin = "config");
void load_config_file(RunConfig& cfg, const std::filesystem::path& path);
void set_field(RunConfig& cfg, const std::string& key, const std::string& value);

/// Fills derived fields (seeds, geometry) and validates everything that does
/// not need the dataset.
void finalize(RunConfig& cfg);

Dataset load_dataset(const RunConfig& cfg);
/// Sets aux_classes from the dataset's base split.
void bind_dataset(RunConfig& cfg, const Dataset& dataset);

/// `<root>/<UTC timestamp>-seed<seed>`, made unique and created.
std::filesystem::path make_run_dir(const RunConfig& cfg);
/// --out, else $PATCHMETA_OUT, else ./runs.
std::filesystem::path output_root(const RunConfig& cfg);

enum ExitCode : int { kOk = 0, kConfigError = 2, kRuntimeError = 3, kDependencyError = 4 };

/// Whole CLI; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace patchmeta::cli

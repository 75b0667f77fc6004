#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "patchmeta/data.hpp"
#include "patchmeta/eval.hpp"
#include "patchmeta/model.hpp"

namespace patchmeta {

/// Loss that drives a parameter group's update inside an episode.
enum class LossRoute { ce, proto, none };

const char* loss_route_name(LossRoute r);
LossRoute parse_loss_route(const std::string& s);

struct TrainConfig {
  std::size_t ways = 5;
  std::size_t shots = 1;
  std::size_t queries = 15;
  std::size_t n_aug = 8;
  double epsilon = 2.0;
  std::size_t episodes_per_epoch = 50;
  std::size_t stage1_epochs = 10;
  std::size_t stage2_epochs = 10;
  std::size_t stage3_epochs = 30;
  SgdConfig emb{0.1, 0.1, 30, 32};
  SgdConfig def{0.003, 0.1, 30, 32};
  std::uint64_t seed = 1;
  std::size_t gallery_per_class = 10;
  /// Update routing: default CE -> emb, prototype loss -> def.
  LossRoute emb_loss = LossRoute::ce;
  LossRoute def_loss = LossRoute::proto;
  PoolMode pool = PoolMode::top_epsilon;
  /// Stage-3 episodes between re-embedding the gallery for pool scoring.
  std::size_t gallery_refresh = 1;
  /// Validation episodes after each epoch (0 disables).
  std::size_t val_episodes = 100;
  /// Write a checkpoint every k epochs into checkpoint_dir (0: never).
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;

  void validate() const;
  std::size_t total_epochs() const { return stage1_epochs + stage2_epochs + stage3_epochs; }
};

struct EpochRecord {
  int stage = 1;
  int epoch = 0;
  double ce_loss = 0.0;
  double proto_loss = 0.0;
  /// Mean over episodes of max |w - 0.5| of the learned weights.
  double max_w_dev = 0.0;
  std::optional<double> val_top1;
  double lr_emb = 0.0;
  double lr_def = 0.0;
};

/// Everything the trainer mutates. Stage only moves forward; the gallery is
/// fixed for the whole run.
struct TrainState {
  Model model;
  Gallery gallery;
  std::vector<Tensor> gallery_images;
  std::uint64_t gallery_hash = 0;
  int stage = 1;
  int epoch = 0;
  Rng rng;
  std::vector<EpochRecord> history;
  /// Gallery embedding used to score pools, and its age in episodes.
  std::optional<Tensor> gallery_embed;
  std::size_t gallery_embed_age = 0;

  TrainState(Model m, Gallery g, std::uint64_t seed);
  /// UsageError if `next` is lower than the current stage.
  void advance_stage(int next);
};

/// Forward pass of one Alg. 1 episode, before any update.
struct EpisodeForward {
  Tensor ce_loss;     // aux-head CE over the augmented support set
  Tensor proto_loss;  // prototype loss of the queries against S~ prototypes
  std::size_t augmented_size = 0;
  std::size_t real_size = 0;
  double max_w_dev = 0.0;
};

/// Samples an episode from the base split, builds S~ and both losses.
/// Pools are scored with the current embedding and episode prototypes.
EpisodeForward episode_forward(TrainState& state, const Dataset& dataset, const TrainConfig& cfg);

struct EpisodeLog {
  double ce_loss = 0.0;
  double proto_loss = 0.0;
  std::size_t augmented_size = 0;
  double max_w_dev = 0.0;
};

/// Both gradients are taken from one forward pass; then the emb step runs,
/// then the def step. Groups frozen by the stage are left untouched.
EpisodeLog apply_episode_updates(TrainState& state, const EpisodeForward& fwd, const TrainConfig& cfg);

/// One full Alg. 1 episode (stages 2 and 3).
EpisodeLog meta_train_episode(TrainState& state, const Dataset& dataset, const TrainConfig& cfg);

/// Stage 1: embedding trained by CE on real plus randomly blended
/// same-class pairs; deformation frozen.
EpochRecord stage1_epoch(TrainState& state, const Dataset& dataset, const TrainConfig& cfg);
/// Stage 2: embedding frozen, deformation trained on Alg. 1 episodes.
EpochRecord stage2_epoch(TrainState& state, const Dataset& dataset, const TrainConfig& cfg);
/// Stage 3: joint training on Alg. 1 episodes.
EpochRecord stage3_epoch(TrainState& state, const Dataset& dataset, const TrainConfig& cfg);

/// One-shot validation accuracy of the current parameters.
double validation_accuracy(const TrainState& state, const Dataset& dataset, const TrainConfig& cfg);

struct FitResult {
  Model model;
  Gallery gallery;
  std::vector<EpochRecord> history;
  std::uint64_t gallery_hash_start = 0;
  std::uint64_t gallery_hash_end = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Stage 1 -> 2 -> 3 from a fresh model seeded by cfg.seed.
FitResult fit(const TrainConfig& cfg, const ModelConfig& model_cfg, const Dataset& dataset,
              const EpochCallback& on_epoch = {});

void write_training_report(const std::filesystem::path& path, const TrainConfig& cfg, const FitResult& result);

// ---- ablation orchestration ---------------------------------------------------

/// Training recipe a variant needs; variants that only change evaluation
/// share the recipe of the checkpoint they evaluate.
struct Recipe {
  std::string name;
  TrainConfig train;
  ModelConfig model;
};

/// Recipe of the checkpoint variant `v` is evaluated on.
Recipe recipe_for(const VariantSpec& v, const TrainConfig& base_train, const ModelConfig& base_model);
/// Stable hash of a recipe's training-relevant fields and the dataset.
std::uint64_t recipe_hash(const Recipe& r, const Dataset& dataset);

struct CheckpointCache {
  std::filesystem::path dir;
  /// Train and store missing recipes instead of raising DependencyError.
  bool train_missing = false;
  std::function<void(const std::string&)> log;

  std::filesystem::path path_for(const Recipe& r, const Dataset& dataset) const;
  /// Loads a cached checkpoint, or trains it if allowed.
  Model obtain(const Recipe& r, const Dataset& dataset, std::size_t* trained = nullptr) const;
};

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  EvalReport report;
};

/// One EvalReport per (variant, seed). Missing checkpoints raise a
/// DependencyError naming every missing variant (unless train_missing).
std::vector<AblationRow> run_ablation_matrix(const TrainConfig& base_train, const ModelConfig& base_model,
                                             const EvalConfig& base_eval, const Dataset& dataset,
                                             const std::vector<VariantSpec>& variants,
                                             const std::vector<std::uint64_t>& seeds, const CheckpointCache& cache);

struct SweepPoint {
  std::size_t n_aug = 0;
  EvalReport report;
};

/// Train (or load) and evaluate one model per n_aug value.
std::vector<SweepPoint> sweep_naug(const TrainConfig& base_train, const ModelConfig& base_model,
                                   const EvalConfig& base_eval, const Dataset& dataset,
                                   const std::vector<std::size_t>& naug_values, const CheckpointCache& cache);

/// One row per (variant, seed, metric).
void write_ablation_table(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
void write_sweep_table(const std::filesystem::path& path, const std::vector<SweepPoint>& points);

}  // namespace patchmeta

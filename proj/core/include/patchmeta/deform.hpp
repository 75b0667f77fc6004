#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchmeta/convnet.hpp"
#include "patchmeta/data.hpp"
#include "patchmeta/params.hpp"

namespace patchmeta {

/// Patch layout for blending. Grid mode splits the image into k x k equal
/// patches; pixel mode gives every pixel its own weight (row-major).
struct PatchGrid {
  std::size_t rows = 3;
  std::size_t cols = 3;
  bool pixel_level = false;

  static PatchGrid grid(std::size_t k) { return {k, k, false}; }
  static PatchGrid pixels(const ImageGeometry& g) { return {g.height, g.width, true}; }
  /// "1", "3", ..., or "pixel".
  static PatchGrid parse(const std::string& text, const ImageGeometry& g);

  std::size_t patches() const { return rows * cols; }
  std::string label() const;
  /// ConfigError unless the image divides evenly.
  void validate(const ImageGeometry& g) const;
};

/// Eq.-1 blend of single images: w [patches], probe/gallery [C,H,W].
Tensor blend_patches(const Tensor& probe, const Tensor& gallery, const Tensor& w, const PatchGrid& grid);

struct DeformConfig {
  std::vector<std::size_t> branch_widths{16, 16, 16, 16};
  PatchGrid grid = PatchGrid::grid(3);
  /// Squash the head output through a sigmoid (ablation knob; default linear).
  bool sigmoid_head = false;
  double head_bias_init = 0.5;
};

/// Deformation sub-network: ANET(probe) and BNET(gallery) features are
/// concatenated and mapped by one linear head to one weight per patch.
/// All parameters are in the `def` group.
class DeformationNet {
 public:
  DeformationNet() = default;
  DeformationNet(DeformConfig cfg, ImageGeometry geometry);

  /// Head weights start at zero and the bias at head_bias_init.
  void init(ParameterSet& params, Rng& rng) const;

  Tensor probe_features(const ParameterSet& params, const Tensor& probes) const;
  Tensor gallery_features(const ParameterSet& params, const Tensor& gallery) const;
  /// Head over already-extracted branch features [B,fa], [B,fb] -> [B,patches].
  Tensor head(const ParameterSet& params, const Tensor& probe_feats, const Tensor& gallery_feats) const;
  /// Batched forward: probes, gallery [B,C,H,W] -> w [B,patches].
  Tensor weights(const ParameterSet& params, const Tensor& probes, const Tensor& gallery) const;

  const DeformConfig& config() const { return cfg_; }
  const PatchGrid& grid() const { return cfg_.grid; }

 private:
  DeformConfig cfg_;
  ImageGeometry geometry_;
  ConvNet anet_;
  ConvNet bnet_;
};

/// Where per-pair blend weights come from.
enum class WeightMode {
  learned,  // deformation sub-network
  random,   // w ~ Uniform(0,1)^patches, bypassing the network
  zero,     // w = 0: synthesized image is the gallery image
  one,      // w = 1: synthesized image is the probe
};

struct Provenance {
  std::size_t probe = 0;    // index into the support list
  std::size_t gallery = 0;  // index into the candidate list
  std::vector<double> w;
};

/// Synthesized items of one augmentation pass. `images` rows follow
/// `provenance` order; labels are the probes' ways.
struct SynthesisResult {
  Tensor images;   // [n, C, H, W]; tracked when weights are learned
  Tensor weights;  // [n, patches]
  std::vector<std::size_t> labels;
  std::vector<Provenance> provenance;

  std::size_t size() const { return labels.size(); }
};

/// Inputs shared by every synthesis call of an episode.
struct SynthesisInputs {
  const DeformationNet* net = nullptr;
  const ParameterSet* params = nullptr;
  /// Candidate gallery images (the gallery, or the support set itself).
  std::span<const Tensor> candidates;
  /// Optional cached BNET features of all candidates [G, fb] (frozen params).
  std::optional<Tensor> candidate_features;
  WeightMode mode = WeightMode::learned;
};

/// n_aug items for every probe in `probes`; probe i draws from pools[labels[i]].
/// Pools of size >= n_aug are sampled without replacement, smaller pools
/// with replacement.
SynthesisResult synthesize(const SynthesisInputs& in, const Tensor& probes, std::span<const std::size_t> probe_labels,
                           const std::vector<std::vector<std::size_t>>& pools, std::size_t n_aug, Rng& rng);

/// Single-probe form.
SynthesisResult synthesize_for_probe(const SynthesisInputs& in, const Tensor& probe, std::size_t label,
                                     std::span<const std::size_t> pool, std::size_t n_aug, Rng& rng);

/// Original support plus n_aug synthesized items per probe.
struct AugmentedSupportSet {
  Tensor real_images;                    // [N*m, C, H, W]
  std::vector<std::size_t> real_labels;  // ways
  SynthesisResult synthesized;
  std::vector<std::vector<std::size_t>> pools;  // per way

  std::size_t size() const { return real_labels.size() + synthesized.size(); }
  std::vector<std::size_t> labels() const;
};

/// Pools by top-epsilon% of `class_scores` ([G, ways], P(way | gallery item)),
/// then synthesis for every support item.
AugmentedSupportSet build_augmented_support(const SynthesisInputs& in, const Tensor& support_images,
                                            std::span<const std::size_t> support_labels, std::size_t ways,
                                            std::span<const double> class_scores, double epsilon_percent,
                                            std::size_t n_aug, Rng& rng);

/// Same as above with explicit per-way pools (random-pool and
/// gallery-from-support variants).
AugmentedSupportSet augment_with_pools(const SynthesisInputs& in, const Tensor& support_images,
                                       std::span<const std::size_t> support_labels,
                                       std::vector<std::vector<std::size_t>> pools, std::size_t n_aug, Rng& rng);

/// w ~ Uniform(0,1)^patches for `count` rows.
Tensor random_weights(std::size_t count, std::size_t patches, Rng& rng);

}  // namespace patchmeta

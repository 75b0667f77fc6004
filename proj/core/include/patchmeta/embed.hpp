#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "patchmeta/convnet.hpp"
#include "patchmeta/data.hpp"
#include "patchmeta/params.hpp"

namespace patchmeta {

struct EmbeddingConfig {
  std::vector<std::size_t> widths{64, 64, 64, 64};
  /// Feature dimension d. A linear projection is appended when it differs
  /// from the last block width.
  std::size_t feature_dim = 64;
  /// Auxiliary softmax head size; must equal the number of base classes.
  std::size_t aux_classes = 40;

  void validate() const;
};

/// Embedding sub-network f_emb plus the auxiliary softmax head. All
/// parameters are in the `emb` group.
class EmbeddingNet {
 public:
  EmbeddingNet() = default;
  EmbeddingNet(EmbeddingConfig cfg, ImageGeometry geometry);

  void init(ParameterSet& params, Rng& rng) const;
  /// [B,C,H,W] -> [B,d]. Differentiable in the parameters and the images.
  Tensor embed(const ParameterSet& params, const Tensor& batch) const;
  /// Single [C,H,W] image -> [1,d].
  Tensor embed_image(const ParameterSet& params, const Tensor& image) const;
  /// Auxiliary head logits [B, aux_classes].
  Tensor aux_logits(const ParameterSet& params, const Tensor& features) const;

  const EmbeddingConfig& config() const { return cfg_; }
  std::size_t feature_dim() const { return cfg_.feature_dim; }

 private:
  EmbeddingConfig cfg_;
  ImageGeometry geometry_;
  ConvNet trunk_;
  bool projected_ = false;
};

/// Per-class mean features of an (augmented) support set.
struct PrototypeSet {
  Tensor prototypes;                // [N,d]
  std::vector<std::size_t> counts;  // Z per class
};

/// p^c = (1/Z) * sum of features whose label (way index) is c, for
/// c = 0..ways-1. features [n,d]; differentiable in the features.
PrototypeSet compute_prototypes(const Tensor& features, std::span<const std::size_t> labels, std::size_t ways);

/// softmax over -||f - p^c||^2 (squared Euclidean): [M,d] -> [M,N].
Tensor prototype_probabilities(const Tensor& query_features, const PrototypeSet& prototypes);
/// Log-probabilities of the same classifier (numerically stable form).
Tensor prototype_log_probabilities(const Tensor& query_features, const PrototypeSet& prototypes);

/// Mean over queries of -log P(y | query).
Tensor prototype_loss(const Tensor& query_features, std::span<const std::size_t> labels,
                      const PrototypeSet& prototypes);

/// Mean -log softmax(logits)[label]; labels index the logit columns.
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);
/// Auxiliary-head cross-entropy of a batch of images against base-class indices.
Tensor cross_entropy_loss(const EmbeddingNet& net, const ParameterSet& params, const Tensor& images,
                          std::span<const std::size_t> base_labels);

// ---- feature export ------------------------------------------------------------

enum class FeatureTag { real, probe, synthesized };
const char* tag_name(FeatureTag tag);

struct FeatureRow {
  std::string id;
  std::string label;
  FeatureTag tag = FeatureTag::real;
  std::vector<double> features;
};

/// CSV: `id,label,tag,f0,...,f{d-1}` with a header row; values printed in
/// shortest round-trip form.
void write_feature_csv(const std::filesystem::path& path, std::span<const FeatureRow> rows);

/// Embeds up to `max_items` items of each of the first `max_classes` classes
/// of `split` (all when 0) as `real` rows.
std::vector<FeatureRow> feature_rows(const EmbeddingNet& net, const ParameterSet& params,
                                     const Dataset& dataset, Split split, std::size_t max_classes,
                                     std::size_t max_items);

/// Embeds a batch in no-grad chunks; returns plain row vectors.
std::vector<std::vector<double>> embed_rows(const EmbeddingNet& net, const ParameterSet& params,
                                            std::span<const Tensor> images, std::size_t chunk = 64);

}  // namespace patchmeta

#pragma once

#include <map>
#include <string>

#include "patchmeta/deform.hpp"
#include "patchmeta/embed.hpp"
#include "patchmeta/params.hpp"

namespace patchmeta {

struct ModelConfig {
  ImageGeometry geometry;
  EmbeddingConfig embed;
  DeformConfig deform;
  /// Grid spelled as accepted by PatchGrid::parse ("3", "pixel", ...).
  std::string grid = "3";
};

/// Both sub-networks and their parameters.
struct Model {
  ModelConfig config;
  EmbeddingNet embed;
  DeformationNet deform;
  ParameterSet params;

  /// Fresh parameters drawn from stream `seed`.
  static Model create(ModelConfig cfg, std::uint64_t seed);
  /// Rebuilds architecture from checkpoint metadata and adopts its values.
  static Model from_checkpoint(Checkpoint ckpt);

  /// Architecture metadata (merged with `extra`) plus a copy of the values.
  Checkpoint to_checkpoint(const std::map<std::string, std::string>& extra = {}) const;
};

std::string join_sizes(const std::vector<std::size_t>& v);
std::vector<std::size_t> parse_sizes(const std::string& text, const std::string& field);

}  // namespace patchmeta

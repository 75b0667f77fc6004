#include "patchmeta/deform.hpp"

#include <algorithm>
#include <map>

#include "patchmeta/errors.hpp"
#include "patchmeta/ops.hpp"

namespace patchmeta {

PatchGrid PatchGrid::parse(const std::string& text, const ImageGeometry& g) {
  if (text == "pixel") return pixels(g);
  std::size_t k = 0;
  try {
    std::size_t used = 0;
    k = std::stoul(text, &used);
    if (used != text.size()) k = 0;
  } catch (const std::exception&) {
    k = 0;
  }
  if (k == 0) throw ConfigError("grid: expected a positive integer or 'pixel', got '" + text + "'");
  return grid(k);
}

std::string PatchGrid::label() const {
  return pixel_level ? std::string("pixel") : std::to_string(rows) + "x" + std::to_string(cols);
}

void PatchGrid::validate(const ImageGeometry& g) const {
  if (rows == 0 || cols == 0 || g.height % rows != 0 || g.width % cols != 0) {
    throw ConfigError("grid " + label() + " does not evenly divide " + std::to_string(g.height) + "x" +
                      std::to_string(g.width) + " images");
  }
}

Tensor blend_patches(const Tensor& probe, const Tensor& gallery, const Tensor& w, const PatchGrid& grid) {
  if (probe.ndim() != 3) throw ShapeError("blend_patches: expected [C,H,W] probe, got " + shape_str(probe.shape()));
  if (w.numel() != grid.patches()) {
    throw ShapeError("blend_patches: " + std::to_string(w.numel()) + " weights for a " + grid.label() + " grid of " +
                     std::to_string(grid.patches()) + " patches");
  }
  Shape batched{1};
  batched.insert(batched.end(), probe.shape().begin(), probe.shape().end());
  Tensor out = patch_blend(reshape(probe, batched), reshape(gallery, batched), reshape(w, {1, grid.patches()}),
                           grid.rows, grid.cols);
  return reshape(out, probe.shape());
}

DeformationNet::DeformationNet(DeformConfig cfg, ImageGeometry geometry)
    : cfg_(std::move(cfg)), geometry_(geometry) {
  cfg_.grid.validate(geometry);
  anet_ = ConvNet("def.anet", ParamGroup::def, geometry.channels, cfg_.branch_widths);
  bnet_ = ConvNet("def.bnet", ParamGroup::def, geometry.channels, cfg_.branch_widths);
  if (std::min(geometry.height, geometry.width) < anet_.min_input_side()) {
    throw ConfigError("deform.branch_widths: too many pooling blocks for " + std::to_string(geometry.height) + "px images");
  }
}

void DeformationNet::init(ParameterSet& params, Rng& rng) const {
  anet_.init(params, rng);
  bnet_.init(params, rng);
  const std::size_t in = anet_.out_dim() + bnet_.out_dim();
  params.add("def.head.weight", ParamGroup::def, {cfg_.grid.patches(), in},
             std::vector<double>(cfg_.grid.patches() * in, 0.0));
  params.add("def.head.bias", ParamGroup::def, {cfg_.grid.patches()},
             std::vector<double>(cfg_.grid.patches(), cfg_.head_bias_init));
}

Tensor DeformationNet::probe_features(const ParameterSet& params, const Tensor& probes) const {
  return anet_.forward(params, probes);
}

Tensor DeformationNet::gallery_features(const ParameterSet& params, const Tensor& gallery) const {
  return bnet_.forward(params, gallery);
}

Tensor DeformationNet::head(const ParameterSet& params, const Tensor& probe_feats, const Tensor& gallery_feats) const {
  const Tensor parts[] = {probe_feats, gallery_feats};
  Tensor w = linear(concat(parts, 1), params.get("def.head.weight"), params.get("def.head.bias"));
  if (w.dim(1) != cfg_.grid.patches()) {
    throw ConfigError("deformation head emits " + std::to_string(w.dim(1)) + " weights, grid needs " +
                      std::to_string(cfg_.grid.patches()));
  }
  return cfg_.sigmoid_head ? sigmoid(w) : w;
}

Tensor DeformationNet::weights(const ParameterSet& params, const Tensor& probes, const Tensor& gallery) const {
  return head(params, probe_features(params, probes), gallery_features(params, gallery));
}

Tensor random_weights(std::size_t count, std::size_t patches, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> w(count * patches);
  for (auto& v : w) v = u(rng);
  return Tensor::from({count, patches}, std::move(w));
}

SynthesisResult synthesize(const SynthesisInputs& in, const Tensor& probes, std::span<const std::size_t> probe_labels,
                           const std::vector<std::vector<std::size_t>>& pools, std::size_t n_aug, Rng& rng) {
  if (!in.net || !in.params) throw UsageError("synthesize: deformation network not provided");
  if (probes.ndim() != 4 || probes.dim(0) != probe_labels.size()) {
    throw ShapeError("synthesize: probes " + shape_str(probes.shape()) + " vs " + std::to_string(probe_labels.size()) + " labels");
  }
  SynthesisResult out;
  if (n_aug == 0) return out;

  std::vector<std::size_t> pair_probe, pair_gallery;
  for (std::size_t i = 0; i < probe_labels.size(); ++i) {
    if (probe_labels[i] >= pools.size()) throw UsageError("synthesize: no pool for way " + std::to_string(probe_labels[i]));
    const auto& pool = pools[probe_labels[i]];
    if (pool.empty()) throw CapacityError("synthesize: empty gallery pool for way " + std::to_string(probe_labels[i]));
    std::vector<std::size_t> picks;
    if (pool.size() >= n_aug) {
      picks = sample_without_replacement(pool, n_aug, rng);
    } else {
      for (std::size_t j = 0; j < n_aug; ++j) picks.push_back(pool[uniform_index(pool.size(), rng)]);
    }
    for (auto g : picks) {
      if (g >= in.candidates.size()) throw UsageError("synthesize: pool index " + std::to_string(g) + " outside candidates");
      pair_probe.push_back(i);
      pair_gallery.push_back(g);
      out.labels.push_back(probe_labels[i]);
    }
  }
  const std::size_t n = pair_probe.size();
  const PatchGrid& grid = in.net->grid();

  std::vector<Tensor> gallery_imgs;
  gallery_imgs.reserve(n);
  for (auto g : pair_gallery) gallery_imgs.push_back(in.candidates[g]);
  Tensor gallery_batch = stack_images(gallery_imgs);
  Tensor probe_batch = gather_rows(probes, pair_probe);

  switch (in.mode) {
    case WeightMode::learned: {
      Tensor a = gather_rows(in.net->probe_features(*in.params, probes), pair_probe);
      Tensor b;
      if (in.candidate_features) {
        b = gather_rows(*in.candidate_features, pair_gallery);
      } else {
        // BNET once per distinct gallery image.
        std::map<std::size_t, std::size_t> slot;
        std::vector<Tensor> uniq;
        for (auto g : pair_gallery) {
          if (slot.emplace(g, uniq.size()).second) uniq.push_back(in.candidates[g]);
        }
        std::vector<std::size_t> rows;
        for (auto g : pair_gallery) rows.push_back(slot[g]);
        b = gather_rows(in.net->gallery_features(*in.params, stack_images(uniq)), rows);
      }
      out.weights = in.net->head(*in.params, a, b);
      break;
    }
    case WeightMode::random: out.weights = random_weights(n, grid.patches(), rng); break;
    case WeightMode::zero: out.weights = Tensor::zeros({n, grid.patches()}); break;
    case WeightMode::one: out.weights = Tensor::full({n, grid.patches()}, 1.0); break;
  }
  out.images = patch_blend(probe_batch, gallery_batch, out.weights, grid.rows, grid.cols);

  auto wd = out.weights.data();
  const std::size_t p = grid.patches();
  for (std::size_t k = 0; k < n; ++k) {
    out.provenance.push_back({pair_probe[k], pair_gallery[k], std::vector<double>(wd.begin() + k * p, wd.begin() + (k + 1) * p)});
  }
  return out;
}

SynthesisResult synthesize_for_probe(const SynthesisInputs& in, const Tensor& probe, std::size_t label,
                                     std::span<const std::size_t> pool, std::size_t n_aug, Rng& rng) {
  if (pool.empty()) throw CapacityError("synthesize_for_probe: empty gallery pool");
  Shape s{1};
  s.insert(s.end(), probe.shape().begin(), probe.shape().end());
  const std::size_t zero = 0;
  SynthesisResult r = synthesize(in, reshape(probe, s), std::span(&zero, 1),
                                 {std::vector<std::size_t>(pool.begin(), pool.end())}, n_aug, rng);
  std::fill(r.labels.begin(), r.labels.end(), label);
  return r;
}

std::vector<std::size_t> AugmentedSupportSet::labels() const {
  std::vector<std::size_t> out = real_labels;
  out.insert(out.end(), synthesized.labels.begin(), synthesized.labels.end());
  return out;
}

AugmentedSupportSet augment_with_pools(const SynthesisInputs& in, const Tensor& support_images,
                                       std::span<const std::size_t> support_labels,
                                       std::vector<std::vector<std::size_t>> pools, std::size_t n_aug, Rng& rng) {
  AugmentedSupportSet s;
  s.real_images = support_images;
  s.real_labels.assign(support_labels.begin(), support_labels.end());
  s.synthesized = synthesize(in, support_images, support_labels, pools, n_aug, rng);
  s.pools = std::move(pools);
  return s;
}

AugmentedSupportSet build_augmented_support(const SynthesisInputs& in, const Tensor& support_images,
                                            std::span<const std::size_t> support_labels, std::size_t ways,
                                            std::span<const double> class_scores, double epsilon_percent,
                                            std::size_t n_aug, Rng& rng) {
  const std::size_t g = in.candidates.size();
  if (g == 0) throw CapacityError("build_augmented_support: empty gallery");
  if (class_scores.size() != g * ways) {
    throw ShapeError("build_augmented_support: expected " + std::to_string(g) + "x" + std::to_string(ways) +
                     " class scores, got " + std::to_string(class_scores.size()));
  }
  std::vector<std::vector<std::size_t>> pools(ways);
  std::vector<double> column(g);
  for (std::size_t c = 0; c < ways; ++c) {
    for (std::size_t i = 0; i < g; ++i) column[i] = class_scores[i * ways + c];
    pools[c] = select_class_pool(column, epsilon_percent);
  }
  return augment_with_pools(in, support_images, support_labels, std::move(pools), n_aug, rng);
}

}  // namespace patchmeta

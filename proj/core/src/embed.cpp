#include "patchmeta/embed.hpp"

#include <charconv>
#include <fstream>

#include "patchmeta/errors.hpp"
#include "patchmeta/ops.hpp"

namespace patchmeta {

void EmbeddingConfig::validate() const {
  if (widths.empty()) throw ConfigError("embed.widths: at least one conv block required");
  if (feature_dim < 2) throw ConfigError("embed.feature_dim must be >= 2");
  if (aux_classes < 2) throw ConfigError("embed.aux_classes must be >= 2");
}

EmbeddingNet::EmbeddingNet(EmbeddingConfig cfg, ImageGeometry geometry)
    : cfg_(std::move(cfg)), geometry_(geometry) {
  cfg_.validate();
  trunk_ = ConvNet("emb", ParamGroup::emb, geometry.channels, cfg_.widths);
  if (std::min(geometry.height, geometry.width) < trunk_.min_input_side()) {
    throw ConfigError("embed.widths: " + std::to_string(cfg_.widths.size()) + " pooling blocks need images of at least " +
                      std::to_string(trunk_.min_input_side()) + " pixels");
  }
  projected_ = cfg_.feature_dim != trunk_.out_dim();
}

void EmbeddingNet::init(ParameterSet& params, Rng& rng) const {
  trunk_.init(params, rng);
  if (projected_) {
    params.add_uniform("emb.proj.weight", ParamGroup::emb, {cfg_.feature_dim, trunk_.out_dim()}, trunk_.out_dim(), rng);
    params.add_uniform("emb.proj.bias", ParamGroup::emb, {cfg_.feature_dim}, trunk_.out_dim(), rng);
  }
  params.add_uniform("emb.aux.weight", ParamGroup::emb, {cfg_.aux_classes, cfg_.feature_dim}, cfg_.feature_dim, rng);
  params.add_uniform("emb.aux.bias", ParamGroup::emb, {cfg_.aux_classes}, cfg_.feature_dim, rng);
}

Tensor EmbeddingNet::embed(const ParameterSet& params, const Tensor& batch) const {
  if (batch.ndim() != 4 || batch.dim(1) != geometry_.channels || batch.dim(2) != geometry_.height ||
      batch.dim(3) != geometry_.width) {
    throw ConfigError("embed: batch " + shape_str(batch.shape()) + " does not match configured image size " +
                      shape_str(geometry_.shape()));
  }
  Tensor f = trunk_.forward(params, batch);
  if (projected_) f = linear(f, params.get("emb.proj.weight"), params.get("emb.proj.bias"));
  return f;
}

Tensor EmbeddingNet::embed_image(const ParameterSet& params, const Tensor& image) const {
  Shape s{1};
  s.insert(s.end(), image.shape().begin(), image.shape().end());
  return embed(params, reshape(image, s));
}

Tensor EmbeddingNet::aux_logits(const ParameterSet& params, const Tensor& features) const {
  return linear(features, params.get("emb.aux.weight"), params.get("emb.aux.bias"));
}

PrototypeSet compute_prototypes(const Tensor& features, std::span<const std::size_t> labels, std::size_t ways) {
  if (features.ndim() != 2 || features.dim(0) != labels.size()) {
    throw ShapeError("compute_prototypes: features " + shape_str(features.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  PrototypeSet out;
  out.counts.assign(ways, 0);
  for (auto l : labels) {
    if (l >= ways) throw UsageError("compute_prototypes: label " + std::to_string(l) + " outside " + std::to_string(ways) + " ways");
    ++out.counts[l];
  }
  for (std::size_t c = 0; c < ways; ++c) {
    if (out.counts[c] == 0) throw CapacityError("compute_prototypes: class " + std::to_string(c) + " has no support items");
  }
  std::vector<double> avg(ways * labels.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    avg[labels[i] * labels.size() + i] = 1.0 / static_cast<double>(out.counts[labels[i]]);
  }
  out.prototypes = matmul(Tensor::from({ways, labels.size()}, std::move(avg)), features);
  return out;
}

namespace {

Tensor neg_sq_distances(const Tensor& query, const PrototypeSet& protos) {
  if (query.ndim() != 2 || query.dim(1) != protos.prototypes.dim(1)) {
    throw ShapeError("prototype classifier: query features " + shape_str(query.shape()) +
                     " do not match prototypes " + shape_str(protos.prototypes.shape()));
  }
  return scale(sq_distances(query, protos.prototypes), -1.0);
}

}  // namespace

Tensor prototype_probabilities(const Tensor& query_features, const PrototypeSet& prototypes) {
  return softmax(neg_sq_distances(query_features, prototypes));
}

Tensor prototype_log_probabilities(const Tensor& query_features, const PrototypeSet& prototypes) {
  return log_softmax(neg_sq_distances(query_features, prototypes));
}

Tensor prototype_loss(const Tensor& query_features, std::span<const std::size_t> labels,
                      const PrototypeSet& prototypes) {
  const std::size_t ways = prototypes.counts.size();
  for (auto l : labels) {
    if (l >= ways) throw UsageError("prototype_loss: query label " + std::to_string(l) + " outside the episode's " + std::to_string(ways) + " classes");
  }
  return scale(mean(pick(prototype_log_probabilities(query_features, prototypes), labels)), -1.0);
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: logits must be 2-D, got " + shape_str(logits.shape()));
  for (auto l : labels) {
    if (l >= logits.dim(1)) {
      throw UsageError("cross_entropy: label " + std::to_string(l) + " out of range for " +
                       std::to_string(logits.dim(1)) + " classes");
    }
  }
  return scale(mean(pick(log_softmax(logits), labels)), -1.0);
}

Tensor cross_entropy_loss(const EmbeddingNet& net, const ParameterSet& params, const Tensor& images,
                          std::span<const std::size_t> base_labels) {
  return cross_entropy(net.aux_logits(params, net.embed(params, images)), base_labels);
}

const char* tag_name(FeatureTag tag) {
  switch (tag) {
    case FeatureTag::real: return "real";
    case FeatureTag::probe: return "probe";
    case FeatureTag::synthesized: return "synthesized";
  }
  return "?";
}

void write_feature_csv(const std::filesystem::path& path, std::span<const FeatureRow> rows) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write feature dump " + path.string());
  const std::size_t d = rows.empty() ? 0 : rows.front().features.size();
  os << "id,label,tag";
  for (std::size_t j = 0; j < d; ++j) os << ",f" << j;
  os << '\n';
  char buf[64];
  for (const auto& r : rows) {
    if (r.features.size() != d) throw ShapeError("feature dump: ragged feature rows");
    os << r.id << ',' << r.label << ',' << tag_name(r.tag);
    for (double v : r.features) {
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      os << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    os << '\n';
  }
  if (!os) throw IoError("short write on feature dump " + path.string());
}

std::vector<std::vector<double>> embed_rows(const EmbeddingNet& net, const ParameterSet& params,
                                            std::span<const Tensor> images, std::size_t chunk) {
  NoGradGuard guard;
  std::vector<std::vector<double>> out;
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t n = std::min(chunk, images.size() - start);
    Tensor f = net.embed(params, stack_images(images.subspan(start, n)));
    const std::size_t d = f.dim(1);
    for (std::size_t i = 0; i < n; ++i) out.emplace_back(f.data().begin() + i * d, f.data().begin() + (i + 1) * d);
  }
  return out;
}

std::vector<FeatureRow> feature_rows(const EmbeddingNet& net, const ParameterSet& params,
                                     const Dataset& dataset, Split split, std::size_t max_classes,
                                     std::size_t max_items) {
  auto classes = dataset.classes(split);
  if (max_classes && classes.size() > max_classes) classes.resize(max_classes);
  std::vector<Tensor> images;
  std::vector<FeatureRow> rows;
  for (int cls : classes) {
    const auto& idx = dataset.items_of(cls);
    const std::size_t n = max_items ? std::min(max_items, idx.size()) : idx.size();
    for (std::size_t i = 0; i < n; ++i) {
      images.push_back(dataset.item(idx[i]).image);
      rows.push_back({"item" + std::to_string(idx[i]), dataset.class_info(cls).name, FeatureTag::real, {}});
    }
  }
  if (images.empty()) throw CapacityError("feature dump: selected slice is empty");
  auto feats = embed_rows(net, params, images);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].features = std::move(feats[i]);
  return rows;
}

}  // namespace patchmeta

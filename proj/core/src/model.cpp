#include "patchmeta/model.hpp"

#include <sstream>

#include "patchmeta/errors.hpp"

namespace patchmeta {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text, const std::string& field) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoul(tok, &used);
      if (used != tok.size() || v == 0) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError(field + ": expected comma-separated positive integers, got '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError(field + ": empty list");
  return out;
}

namespace {

void build_nets(Model& m) {
  m.config.deform.grid = PatchGrid::parse(m.config.grid, m.config.geometry);
  m.embed = EmbeddingNet(m.config.embed, m.config.geometry);
  m.deform = DeformationNet(m.config.deform, m.config.geometry);
}

const std::string& meta(const std::map<std::string, std::string>& md, const std::string& key) {
  auto it = md.find(key);
  if (it == md.end()) throw IntegrityError("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

}  // namespace

Model Model::create(ModelConfig cfg, std::uint64_t seed) {
  Model m;
  m.config = std::move(cfg);
  build_nets(m);
  Rng rng = make_rng(seed, 1);
  m.embed.init(m.params, rng);
  m.deform.init(m.params, rng);
  return m;
}

Model Model::from_checkpoint(Checkpoint ckpt) {
  const auto& md = ckpt.metadata;
  Model m;
  try {
    m.config.geometry = {std::stoul(meta(md, "image.channels")), std::stoul(meta(md, "image.height")),
                         std::stoul(meta(md, "image.width"))};
    m.config.embed.widths = parse_sizes(meta(md, "embed.widths"), "embed.widths");
    m.config.embed.feature_dim = std::stoul(meta(md, "embed.feature_dim"));
    m.config.embed.aux_classes = std::stoul(meta(md, "embed.aux_classes"));
    m.config.deform.branch_widths = parse_sizes(meta(md, "deform.branch_widths"), "deform.branch_widths");
    m.config.deform.sigmoid_head = meta(md, "deform.sigmoid_head") == "true";
    m.config.deform.head_bias_init = std::stod(meta(md, "deform.head_bias_init"));
  } catch (const std::invalid_argument&) {
    throw IntegrityError("checkpoint metadata holds a malformed architecture field");
  }
  m.config.grid = meta(md, "deform.grid");
  build_nets(m);

  // Architecture must match the stored tensors exactly.
  ParameterSet expected;
  Rng scratch = make_rng(0);
  m.embed.init(expected, scratch);
  m.deform.init(expected, scratch);
  if (expected.names() != ckpt.params.names()) throw IntegrityError("checkpoint parameters do not match its architecture metadata");
  for (const auto& n : expected.names()) {
    if (expected.get(n).shape() != ckpt.params.get(n).shape() || expected.group_of(n) != ckpt.params.group_of(n)) {
      throw IntegrityError("checkpoint parameter '" + n + "' has unexpected shape or group");
    }
  }
  m.params = std::move(ckpt.params);
  return m;
}

Checkpoint Model::to_checkpoint(const std::map<std::string, std::string>& extra) const {
  Checkpoint c;
  c.params = params.clone();
  c.metadata = extra;
  c.metadata["image.channels"] = std::to_string(config.geometry.channels);
  c.metadata["image.height"] = std::to_string(config.geometry.height);
  c.metadata["image.width"] = std::to_string(config.geometry.width);
  c.metadata["embed.widths"] = join_sizes(config.embed.widths);
  c.metadata["embed.feature_dim"] = std::to_string(config.embed.feature_dim);
  c.metadata["embed.aux_classes"] = std::to_string(config.embed.aux_classes);
  c.metadata["deform.branch_widths"] = join_sizes(config.deform.branch_widths);
  c.metadata["deform.grid"] = config.grid;
  c.metadata["deform.sigmoid_head"] = config.deform.sigmoid_head ? "true" : "false";
  std::ostringstream bias;
  bias.precision(17);
  bias << config.deform.head_bias_init;
  c.metadata["deform.head_bias_init"] = bias.str();
  return c;
}

}  // namespace patchmeta

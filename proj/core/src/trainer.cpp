#include "patchmeta/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "patchmeta/errors.hpp"
#include "patchmeta/ops.hpp"

namespace patchmeta {

const char* loss_route_name(LossRoute r) {
  switch (r) {
    case LossRoute::ce: return "ce";
    case LossRoute::proto: return "proto";
    case LossRoute::none: return "none";
  }
  return "?";
}

LossRoute parse_loss_route(const std::string& s) {
  if (s == "ce") return LossRoute::ce;
  if (s == "proto") return LossRoute::proto;
  if (s == "none") return LossRoute::none;
  throw ConfigError("unknown loss route '" + s + "' (expected ce, proto or none)");
}

void TrainConfig::validate() const {
  if (ways < 2) throw ConfigError("train.ways must be >= 2");
  if (shots < 1) throw ConfigError("train.shots must be >= 1");
  if (queries < 1) throw ConfigError("train.queries must be >= 1");
  if (!(epsilon > 0.0 && epsilon <= 100.0)) throw ConfigError("train.epsilon must be in (0,100]");
  if (episodes_per_epoch < 1) throw ConfigError("train.episodes_per_epoch must be >= 1");
  if (total_epochs() < 1) throw ConfigError("train: at least one stage must have epochs");
  if (gallery_per_class < 1) throw ConfigError("train.gallery_per_class must be >= 1");
  if (gallery_refresh < 1) throw ConfigError("train.gallery_refresh must be >= 1");
  if (checkpoint_every > 0 && checkpoint_dir.empty()) throw ConfigError("train.checkpoint_dir is required with checkpoint_every");
  emb.validate("sgd.emb");
  def.validate("sgd.def");
}

TrainState::TrainState(Model m, Gallery g, std::uint64_t seed)
    : model(std::move(m)), gallery(std::move(g)), gallery_hash(gallery.hash()), rng(make_rng(seed, 2)) {
  for (const auto& it : gallery.items()) gallery_images.push_back(it.image);
}

void TrainState::advance_stage(int next) {
  if (next < stage) {
    throw UsageError("stage transitions only advance: " + std::to_string(stage) + " -> " + std::to_string(next));
  }
  if (next != stage) {
    gallery_embed.reset();
    gallery_embed_age = 0;
  }
  stage = next;
}

namespace {

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Tensor embed_chunked(const Model& m, std::span<const Tensor> images) {
  NoGradGuard guard;
  std::vector<Tensor> chunks;
  for (std::size_t s = 0; s < images.size(); s += 64) {
    const std::size_t n = std::min<std::size_t>(64, images.size() - s);
    chunks.push_back(m.embed.embed(m.params, stack_images(images.subspan(s, n))));
  }
  return chunks.size() == 1 ? chunks[0] : concat(chunks, 0);
}

const Tensor& gallery_scores_source(TrainState& s, const TrainConfig& cfg) {
  // Stage 2 freezes the embedding, so one pass serves the whole stage.
  const bool stale = !s.gallery_embed || (s.stage == 3 && s.gallery_embed_age >= cfg.gallery_refresh);
  if (stale) {
    s.gallery_embed = embed_chunked(s.model, s.gallery_images);
    s.gallery_embed_age = 0;
  }
  ++s.gallery_embed_age;
  return *s.gallery_embed;
}

double max_w_deviation(const Tensor& w) {
  double m = 0.0;
  for (double v : w.data()) m = std::max(m, std::abs(v - 0.5));
  return m;
}

}  // namespace

EpisodeForward episode_forward(TrainState& state, const Dataset& dataset, const TrainConfig& cfg) {
  if (state.stage < 2) throw UsageError("episode_forward: Alg. 1 episodes run in stages 2 and 3");
  const Model& m = state.model;
  const Episode ep = sample_episode(dataset, Split::base, cfg.ways, cfg.shots, cfg.queries, state.rng);

  std::vector<Tensor> s_imgs, q_imgs;
  std::vector<std::size_t> s_way, q_way, way_base(cfg.ways);
  for (std::size_t c = 0; c < cfg.ways; ++c) way_base[c] = dataset.base_index(ep.classes[c]);
  for (const auto& it : ep.support) {
    s_imgs.push_back(dataset.item(it.item).image);
    s_way.push_back(it.way);
  }
  for (const auto& it : ep.query) {
    q_imgs.push_back(dataset.item(it.item).image);
    q_way.push_back(it.way);
  }
  const Tensor s_batch = stack_images(s_imgs);
  const Tensor fs = m.embed.embed(m.params, s_batch);
  const Tensor fq = m.embed.embed(m.params, stack_images(q_imgs));

  EpisodeForward out;
  out.real_size = s_imgs.size();
  std::vector<Tensor> feats{fs};
  std::vector<std::size_t> labels = s_way;

  if (cfg.n_aug > 0) {
    SynthesisInputs in;
    in.net = &m.deform;
    in.params = &m.params;
    in.mode = WeightMode::learned;
    std::vector<std::vector<std::size_t>> pools(cfg.ways);
    if (cfg.pool == PoolMode::support) {
      in.candidates = s_imgs;
      pools.assign(cfg.ways, all_indices(s_imgs.size()));
    } else {
      if (state.gallery.empty()) throw CapacityError("training needs a non-empty gallery");
      in.candidates = state.gallery_images;
      if (cfg.pool == PoolMode::random) {
        pools.assign(cfg.ways, all_indices(state.gallery_images.size()));
      } else {
        const Tensor& g = gallery_scores_source(state, cfg);
        NoGradGuard guard;
        const Tensor probs = prototype_probabilities(g, compute_prototypes(fs.detach(), s_way, cfg.ways));
        std::vector<double> column(state.gallery_images.size());
        for (std::size_t c = 0; c < cfg.ways; ++c) {
          for (std::size_t i = 0; i < column.size(); ++i) column[i] = probs[i * cfg.ways + c];
          pools[c] = select_class_pool(column, cfg.epsilon);
        }
      }
    }
    SynthesisResult syn = synthesize(in, s_batch, s_way, pools, cfg.n_aug, state.rng);
    out.max_w_dev = max_w_deviation(syn.weights);
    feats.push_back(m.embed.embed(m.params, syn.images));
    labels.insert(labels.end(), syn.labels.begin(), syn.labels.end());
  }

  const Tensor all = feats.size() == 1 ? feats[0] : concat(feats, 0);
  out.augmented_size = labels.size();
  out.proto_loss = prototype_loss(fq, q_way, compute_prototypes(all, labels, cfg.ways));
  std::vector<std::size_t> base_labels(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) base_labels[i] = way_base[labels[i]];
  out.ce_loss = cross_entropy(m.embed.aux_logits(m.params, all), base_labels);
  return out;
}

EpisodeLog apply_episode_updates(TrainState& state, const EpisodeForward& fwd, const TrainConfig& cfg) {
  auto loss_of = [&](LossRoute r) -> const Tensor* {
    switch (r) {
      case LossRoute::ce: return &fwd.ce_loss;
      case LossRoute::proto: return &fwd.proto_loss;
      case LossRoute::none: return nullptr;
    }
    return nullptr;
  };
  const Tensor* emb_loss = state.stage == 3 ? loss_of(cfg.emb_loss) : nullptr;
  const Tensor* def_loss = state.stage >= 2 ? loss_of(cfg.def_loss) : nullptr;
  auto& params = state.model.params;

  // Both backward sweeps use the untouched forward values; steps follow.
  if (emb_loss && emb_loss == def_loss) {
    params.backward(*emb_loss, kEmbGroup | kDefGroup);
  } else {
    if (emb_loss) params.backward(*emb_loss, kEmbGroup);
    if (def_loss) params.backward(*def_loss, kDefGroup);
  }
  if (emb_loss) sgd_step(params, ParamGroup::emb, cfg.emb, state.epoch);
  if (def_loss) sgd_step(params, ParamGroup::def, cfg.def, state.epoch);
  return {fwd.ce_loss.item(), fwd.proto_loss.item(), fwd.augmented_size, fwd.max_w_dev};
}

EpisodeLog meta_train_episode(TrainState& state, const Dataset& dataset, const TrainConfig& cfg) {
  const EpisodeForward fwd = episode_forward(state, dataset, cfg);
  return apply_episode_updates(state, fwd, cfg);
}

namespace {

EpochRecord start_record(const TrainState& s, const TrainConfig& cfg) {
  EpochRecord r;
  r.stage = s.stage;
  r.epoch = s.epoch;
  r.lr_emb = s.stage == 2 ? 0.0 : cfg.emb.rate(s.epoch);
  r.lr_def = s.stage == 1 ? 0.0 : cfg.def.rate(s.epoch);
  return r;
}

void finish_record(TrainState& s, const Dataset& dataset, const TrainConfig& cfg, EpochRecord& r) {
  if (cfg.val_episodes > 0) r.val_top1 = validation_accuracy(s, dataset, cfg);
  s.history.push_back(r);
  ++s.epoch;
}

EpochRecord episodic_epoch(TrainState& state, const Dataset& dataset, const TrainConfig& cfg, int stage) {
  state.advance_stage(stage);
  EpochRecord r = start_record(state, cfg);
  for (std::size_t e = 0; e < cfg.episodes_per_epoch; ++e) {
    const EpisodeLog log = meta_train_episode(state, dataset, cfg);
    r.ce_loss += log.ce_loss;
    r.proto_loss += log.proto_loss;
    r.max_w_dev += log.max_w_dev;
  }
  const double n = static_cast<double>(cfg.episodes_per_epoch);
  r.ce_loss /= n;
  r.proto_loss /= n;
  r.max_w_dev /= n;
  finish_record(state, dataset, cfg, r);
  return r;
}

}  // namespace

EpochRecord stage1_epoch(TrainState& state, const Dataset& dataset, const TrainConfig& cfg) {
  state.advance_stage(1);
  if (state.stage != 1) throw UsageError("stage1_epoch: stage 1 is over");
  EpochRecord r = start_record(state, cfg);
  const Model& m = state.model;
  const PatchGrid& grid = m.deform.grid();
  std::vector<std::size_t> base_items;
  for (int c : dataset.classes(Split::base)) {
    const auto& v = dataset.items_of(c);
    base_items.insert(base_items.end(), v.begin(), v.end());
  }
  if (base_items.empty()) throw CapacityError("stage 1: dataset has no base-class images");
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.emb.batch_size), base_items.size());

  for (std::size_t step = 0; step < cfg.episodes_per_epoch; ++step) {
    const auto picked = sample_without_replacement(base_items, batch, state.rng);
    std::vector<Tensor> probes, partners;
    std::vector<std::size_t> labels;
    for (std::size_t idx : picked) {
      const Item& it = dataset.item(idx);
      const auto& same = dataset.items_of(it.class_id);
      std::size_t partner = idx;
      if (same.size() > 1) {
        // Uniform over the other members of the class.
        const std::size_t j = uniform_index(same.size() - 1, state.rng);
        partner = same[j] >= idx ? same[j + 1] : same[j];
      }
      probes.push_back(it.image);
      partners.push_back(dataset.item(partner).image);
      labels.push_back(dataset.base_index(it.class_id));
    }
    const Tensor probe_batch = stack_images(probes);
    const Tensor w = random_weights(batch, grid.patches(), state.rng);
    const Tensor deformed = patch_blend(probe_batch, stack_images(partners), w, grid.rows, grid.cols);
    std::vector<std::size_t> all_labels = labels;
    all_labels.insert(all_labels.end(), labels.begin(), labels.end());
    const Tensor images = concat(std::vector<Tensor>{probe_batch, deformed}, 0);
    const Tensor loss = cross_entropy_loss(m.embed, m.params, images, all_labels);
    state.model.params.backward(loss, kEmbGroup);
    sgd_step(state.model.params, ParamGroup::emb, cfg.emb, state.epoch);
    r.ce_loss += loss.item();
  }
  r.ce_loss /= static_cast<double>(cfg.episodes_per_epoch);
  finish_record(state, dataset, cfg, r);
  return r;
}

EpochRecord stage2_epoch(TrainState& state, const Dataset& dataset, const TrainConfig& cfg) {
  return episodic_epoch(state, dataset, cfg, 2);
}

EpochRecord stage3_epoch(TrainState& state, const Dataset& dataset, const TrainConfig& cfg) {
  return episodic_epoch(state, dataset, cfg, 3);
}

double validation_accuracy(const TrainState& state, const Dataset& dataset, const TrainConfig& cfg) {
  EvalConfig e;
  e.ways = cfg.ways;
  e.shots = 1;
  e.queries = cfg.queries;
  e.episodes = cfg.val_episodes;
  e.topk = {1};
  e.n_aug = cfg.n_aug;
  e.epsilon = cfg.epsilon;
  e.split = Split::validation;
  e.seed = cfg.seed ^ 0x7a11da7eULL;
  if (cfg.pool == PoolMode::random) e.variant = {Variant::random_pool};
  if (cfg.pool == PoolMode::support) e.variant = {Variant::gallery_from_support};
  return meta_test(state.model, dataset, state.gallery, e).mean[0];
}

FitResult fit(const TrainConfig& cfg, const ModelConfig& model_cfg, const Dataset& dataset, const EpochCallback& on_epoch) {
  cfg.validate();
  const std::size_t n_base = dataset.classes(Split::base).size();
  if (model_cfg.embed.aux_classes != n_base) {
    throw ConfigError("embed.aux_classes is " + std::to_string(model_cfg.embed.aux_classes) + " but the dataset has " +
                      std::to_string(n_base) + " base classes");
  }
  TrainState state(Model::create(model_cfg, cfg.seed), build_gallery(dataset, cfg.gallery_per_class, cfg.seed), cfg.seed);
  const std::uint64_t start_hash = state.gallery_hash;

  auto after_epoch = [&](const EpochRecord& r) {
    if (on_epoch) on_epoch(r);
    if (cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0) {
      std::ostringstream name;
      name << "epoch-" << std::setw(4) << std::setfill('0') << state.epoch << ".ckpt";
      save_checkpoint(cfg.checkpoint_dir / name.str(),
                      state.model.to_checkpoint({{"stage", std::to_string(state.stage)},
                                                 {"epoch", std::to_string(state.epoch)},
                                                 {"seed", std::to_string(cfg.seed)}}));
    }
  };
  for (std::size_t i = 0; i < cfg.stage1_epochs; ++i) after_epoch(stage1_epoch(state, dataset, cfg));
  for (std::size_t i = 0; i < cfg.stage2_epochs; ++i) after_epoch(stage2_epoch(state, dataset, cfg));
  for (std::size_t i = 0; i < cfg.stage3_epochs; ++i) after_epoch(stage3_epoch(state, dataset, cfg));

  const std::uint64_t end_hash = state.gallery.hash();
  if (end_hash != start_hash) throw IntegrityError("gallery content changed during training");
  return {std::move(state.model), std::move(state.gallery), std::move(state.history), start_hash, end_hash};
}

void write_training_report(const std::filesystem::path& path, const TrainConfig& cfg, const FitResult& result) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["stages"] = {cfg.stage1_epochs, cfg.stage2_epochs, cfg.stage3_epochs};
  j["gallery_size"] = result.gallery.size();
  j["gallery_hash_start"] = result.gallery_hash_start;
  j["gallery_hash_end"] = result.gallery_hash_end;
  j["params_hash"] = result.model.params.hash();
  auto& epochs = j["epochs"];
  epochs = nlohmann::ordered_json::array();
  for (const auto& r : result.history) {
    nlohmann::ordered_json e{{"epoch", r.epoch},       {"stage", r.stage},           {"ce_loss", r.ce_loss},
                             {"proto_loss", r.proto_loss}, {"max_w_dev", r.max_w_dev}, {"lr_emb", r.lr_emb},
                             {"lr_def", r.lr_def}};
    e["val_top1"] = r.val_top1 ? nlohmann::ordered_json(*r.val_top1) : nlohmann::ordered_json(nullptr);
    epochs.push_back(std::move(e));
  }
  ensure_parent(path);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

// ---- ablation orchestration ---------------------------------------------------

Recipe recipe_for(const VariantSpec& v, const TrainConfig& base_train, const ModelConfig& base_model) {
  Recipe r{"full", base_train, base_model};
  switch (v.kind) {
    case Variant::no_celoss_training:
      r.name = "no_celoss";
      r.train.emb_loss = LossRoute::proto;
      break;
    case Variant::no_protoloss_training:
      r.name = "no_protoloss";
      r.train.def_loss = LossRoute::ce;
      break;
    case Variant::random_pool:
      r.name = "random_pool";
      r.train.pool = PoolMode::random;
      break;
    case Variant::gallery_from_support:
      r.name = "gallery_from_support";
      r.train.pool = PoolMode::support;
      break;
    case Variant::grid:
      if (std::to_string(v.grid_k) != base_model.grid) {
        r.name = "grid" + std::to_string(v.grid_k);
        r.model.grid = std::to_string(v.grid_k);
      }
      break;
    case Variant::pixel_level:
      if (base_model.grid != "pixel") {
        r.name = "pixel";
        r.model.grid = "pixel";
      }
      break;
    case Variant::baseline_flip:
    case Variant::baseline_noise_pixel:
    case Variant::baseline_noise_feature:
    case Variant::baseline_mixup:
    case Variant::baseline_none:
      r.name = "baseline_none";
      r.train.n_aug = 0;
      break;
    default: break;  // evaluation-only variants share the full checkpoint
  }
  return r;
}

std::uint64_t recipe_hash(const Recipe& r, const Dataset& dataset) {
  Fnv1a h;
  const TrainConfig& t = r.train;
  for (std::size_t v : {t.ways, t.shots, t.queries, t.n_aug, t.episodes_per_epoch, t.stage1_epochs, t.stage2_epochs,
                        t.stage3_epochs, t.gallery_per_class, t.gallery_refresh}) {
    h.update_value(static_cast<std::uint64_t>(v));
  }
  h.update_value(t.epsilon);
  for (const SgdConfig* s : {&t.emb, &t.def}) {
    h.update_value(s->lr);
    h.update_value(s->decay);
    h.update_value(static_cast<std::int64_t>(s->decay_interval));
    h.update_value(static_cast<std::int64_t>(s->batch_size));
  }
  h.update_value(t.seed);
  h.update(loss_route_name(t.emb_loss));
  h.update(loss_route_name(t.def_loss));
  h.update(pool_mode_name(t.pool));
  const ModelConfig& m = r.model;
  h.update_value(static_cast<std::uint64_t>(m.geometry.channels));
  h.update_value(static_cast<std::uint64_t>(m.geometry.height));
  h.update_value(static_cast<std::uint64_t>(m.geometry.width));
  h.update(join_sizes(m.embed.widths));
  h.update_value(static_cast<std::uint64_t>(m.embed.feature_dim));
  h.update_value(static_cast<std::uint64_t>(m.embed.aux_classes));
  h.update(join_sizes(m.deform.branch_widths));
  h.update_value(m.deform.sigmoid_head);
  h.update_value(m.deform.head_bias_init);
  h.update(m.grid);
  h.update_value(dataset.hash());
  return h.digest();
}

std::filesystem::path CheckpointCache::path_for(const Recipe& r, const Dataset& dataset) const {
  std::ostringstream name;
  name << r.name << '-' << std::hex << std::setw(16) << std::setfill('0') << recipe_hash(r, dataset) << ".ckpt";
  return dir / name.str();
}

Model CheckpointCache::obtain(const Recipe& r, const Dataset& dataset, std::size_t* trained) const {
  const auto path = path_for(r, dataset);
  if (std::filesystem::exists(path)) {
    if (log) log("cache hit " + path.filename().string());
    return Model::from_checkpoint(load_checkpoint(path));
  }
  if (!train_missing) throw DependencyError("missing checkpoint for recipe '" + r.name + "': " + path.string());
  if (log) log("training recipe " + r.name + " (seed " + std::to_string(r.train.seed) + ")");
  FitResult res = fit(r.train, r.model, dataset);
  ensure_directory(dir);
  const auto tmp = path.string() + ".tmp";
  save_checkpoint(tmp, res.model.to_checkpoint({{"recipe", r.name}, {"seed", std::to_string(r.train.seed)}}));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " to " + path.string() + ": " + ec.message());
  if (trained) ++*trained;
  return std::move(res.model);
}

namespace {

void require_cached(const std::vector<std::pair<std::string, Recipe>>& needed, const Dataset& dataset,
                    const CheckpointCache& cache) {
  if (cache.train_missing) return;
  std::vector<std::string> missing;
  for (const auto& [label, r] : needed) {
    if (!std::filesystem::exists(cache.path_for(r, dataset))) missing.push_back(label);
  }
  if (missing.empty()) return;
  std::string msg = "missing checkpoints for:";
  for (const auto& m : missing) msg += " " + m;
  msg += " (rerun with --train-missing or train them first)";
  throw DependencyError(msg);
}

}  // namespace

std::vector<AblationRow> run_ablation_matrix(const TrainConfig& base_train, const ModelConfig& base_model,
                                             const EvalConfig& base_eval, const Dataset& dataset,
                                             const std::vector<VariantSpec>& variants,
                                             const std::vector<std::uint64_t>& seeds, const CheckpointCache& cache) {
  if (variants.empty() || seeds.empty()) throw ConfigError("ablation: variants and seeds must be non-empty");
  std::vector<std::pair<std::string, Recipe>> needed;
  for (auto seed : seeds) {
    TrainConfig t = base_train;
    t.seed = seed;
    for (const auto& v : variants) needed.emplace_back(v.name() + "@seed" + std::to_string(seed), recipe_for(v, t, base_model));
  }
  require_cached(needed, dataset, cache);

  std::vector<AblationRow> rows;
  std::size_t i = 0;
  for (auto seed : seeds) {
    for (const auto& v : variants) {
      const Recipe& r = needed[i++].second;
      const Model model = cache.obtain(r, dataset);
      const Gallery gallery = build_gallery(dataset, r.train.gallery_per_class, seed);
      EvalConfig e = base_eval;
      e.variant = v;
      e.seed = seed;
      rows.push_back({v.name(), seed, meta_test(model, dataset, gallery, e)});
    }
  }
  return rows;
}

std::vector<SweepPoint> sweep_naug(const TrainConfig& base_train, const ModelConfig& base_model,
                                   const EvalConfig& base_eval, const Dataset& dataset,
                                   const std::vector<std::size_t>& naug_values, const CheckpointCache& cache) {
  if (naug_values.empty()) throw ConfigError("sweep: n_aug list must be non-empty");
  std::vector<std::pair<std::string, Recipe>> needed;
  for (auto n : naug_values) {
    Recipe r{"full", base_train, base_model};
    if (n == 0) {
      r = recipe_for({Variant::baseline_none}, base_train, base_model);
    } else if (n != base_train.n_aug) {
      r.name = "naug" + std::to_string(n);
      r.train.n_aug = n;
    }
    needed.emplace_back("n_aug=" + std::to_string(n), r);
  }
  require_cached(needed, dataset, cache);

  std::vector<SweepPoint> points;
  for (std::size_t i = 0; i < naug_values.size(); ++i) {
    const Recipe& r = needed[i].second;
    const Model model = cache.obtain(r, dataset);
    const Gallery gallery = build_gallery(dataset, r.train.gallery_per_class, r.train.seed);
    EvalConfig e = base_eval;
    e.n_aug = naug_values[i];
    e.variant = {Variant::full};
    points.push_back({naug_values[i], meta_test(model, dataset, gallery, e)});
  }
  return points;
}

void write_ablation_table(const std::filesystem::path& path, const std::vector<AblationRow>& rows) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "variant\tseed\tmetric\tmean\tci95_half_width\n" << std::setprecision(17);
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < r.report.topk.size(); ++k) {
      os << r.variant << '\t' << r.seed << "\ttop" << r.report.topk[k] << '\t' << r.report.mean[k] << '\t'
         << r.report.half_width[k] << '\n';
    }
  }
}

void write_sweep_table(const std::filesystem::path& path, const std::vector<SweepPoint>& points) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "n_aug\tmetric\tmean\tci95_half_width\n" << std::setprecision(17);
  for (const auto& p : points) {
    for (std::size_t k = 0; k < p.report.topk.size(); ++k) {
      os << p.n_aug << "\ttop" << p.report.topk[k] << '\t' << p.report.mean[k] << '\t' << p.report.half_width[k] << '\n';
    }
  }
}

}  // namespace patchmeta

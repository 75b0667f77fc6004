#include "patchmeta/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "patchmeta/errors.hpp"
#include "patchmeta/ops.hpp"

namespace patchmeta {

namespace {

struct VariantName {
  Variant kind;
  const char* name;
};

constexpr VariantName kVariantNames[] = {
    {Variant::full, "full"},
    {Variant::no_celoss_training, "no_celoss_training"},
    {Variant::no_protoloss_training, "no_protoloss_training"},
    {Variant::random_pool, "random_pool"},
    {Variant::no_aug_testing, "no_aug_testing"},
    {Variant::random_weights, "random_weights"},
    {Variant::gallery_from_support, "gallery_from_support"},
    {Variant::deform_is_gallery, "deform_is_gallery"},
    {Variant::pixel_level, "pixel_level"},
    {Variant::baseline_flip, "baseline_flip"},
    {Variant::baseline_noise_pixel, "baseline_noise_pixel"},
    {Variant::baseline_noise_feature, "baseline_noise_feature"},
    {Variant::baseline_mixup, "baseline_mixup"},
    {Variant::baseline_none, "baseline_none"},
};

}  // namespace

std::string VariantSpec::name() const {
  if (kind == Variant::grid) return "grid(" + std::to_string(grid_k) + ")";
  for (const auto& v : kVariantNames) {
    if (v.kind == kind) return v.name;
  }
  return "?";
}

VariantSpec VariantSpec::parse(const std::string& text) {
  for (const auto& v : kVariantNames) {
    if (text == v.name) return {v.kind, 3};
  }
  std::string digits;
  if (text.rfind("grid(", 0) == 0 && text.size() > 6 && text.back() == ')') {
    digits = text.substr(5, text.size() - 6);
  } else if (text.rfind("grid", 0) == 0 && text.size() > 4) {
    digits = text.substr(4);
  }
  if (!digits.empty() && std::all_of(digits.begin(), digits.end(), ::isdigit)) {
    const auto k = std::stoul(digits);
    if (k > 0) return {Variant::grid, k};
  }
  throw ConfigError("unknown variant '" + text + "'");
}

std::vector<VariantSpec> ablation_variants() {
  return {{Variant::no_celoss_training}, {Variant::no_protoloss_training}, {Variant::random_pool},
          {Variant::no_aug_testing},     {Variant::random_weights},        {Variant::gallery_from_support},
          {Variant::deform_is_gallery}};
}

std::vector<VariantSpec> baseline_variants() {
  return {{Variant::baseline_none}, {Variant::baseline_flip}, {Variant::baseline_noise_pixel},
          {Variant::baseline_noise_feature}, {Variant::baseline_mixup}};
}

const char* pool_mode_name(PoolMode m) {
  switch (m) {
    case PoolMode::top_epsilon: return "top_epsilon";
    case PoolMode::random: return "random";
    case PoolMode::support: return "support";
  }
  return "?";
}

PoolMode parse_pool_mode(const std::string& s) {
  if (s == "top_epsilon") return PoolMode::top_epsilon;
  if (s == "random") return PoolMode::random;
  if (s == "support") return PoolMode::support;
  throw ConfigError("unknown pool mode '" + s + "'");
}

AugmentPlan eval_plan(const VariantSpec& v, bool augment_at_test) {
  AugmentPlan p;
  p.augment = augment_at_test;
  switch (v.kind) {
    case Variant::random_pool: p.pool = PoolMode::random; break;
    case Variant::gallery_from_support: p.pool = PoolMode::support; break;
    case Variant::no_aug_testing: p.augment = false; break;
    case Variant::random_weights: p.weights = WeightMode::random; break;
    case Variant::deform_is_gallery: p.weights = WeightMode::zero; break;
    case Variant::baseline_flip: p.baseline = BaselineKind::flip; break;
    case Variant::baseline_noise_pixel: p.baseline = BaselineKind::noise_pixel; break;
    case Variant::baseline_noise_feature: p.baseline = BaselineKind::noise_feature; break;
    case Variant::baseline_mixup: p.baseline = BaselineKind::mixup; break;
    case Variant::baseline_none: p.augment = false; break;
    default: break;
  }
  return p;
}

void EvalConfig::validate() const {
  if (ways < 2) throw ConfigError("eval.ways must be >= 2");
  if (shots < 1) throw ConfigError("eval.shots must be >= 1");
  if (queries < 1) throw ConfigError("eval.queries must be >= 1");
  if (episodes < 1) throw ConfigError("eval.episodes must be >= 1");
  if (topk.empty()) throw ConfigError("eval.topk must list at least one k");
  for (auto k : topk) {
    if (k == 0) throw ConfigError("eval.topk entries must be >= 1");
  }
  if (!(epsilon > 0.0 && epsilon <= 100.0)) throw ConfigError("eval.epsilon must be in (0,100]");
  if (threads < 1) throw ConfigError("eval.threads must be >= 1");
}

std::optional<std::size_t> EvalReport::slot(std::size_t k) const {
  for (std::size_t i = 0; i < topk.size(); ++i) {
    if (topk[i] == k) return i;
  }
  return std::nullopt;
}

double ci_half_width(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double m = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return 1.96 * std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

PairedDifference paired_difference(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw UsageError("paired_difference: lists must be non-empty and equally long");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a[i] - b[i];
  return {std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size()), ci_half_width(d)};
}

double topk_accuracy(std::span<const double> probs, std::size_t ways, std::span<const std::size_t> labels,
                     std::size_t k) {
  if (probs.size() != ways * labels.size()) throw ShapeError("topk_accuracy: probability matrix does not match labels");
  double hits = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = probs.data() + i * ways;
    const double truth = row[labels[i]];
    std::size_t greater = 0, equal = 0;
    for (std::size_t c = 0; c < ways; ++c) {
      if (row[c] > truth) ++greater;
      else if (row[c] == truth) ++equal;
    }
    if (greater < k) hits += std::min(1.0, static_cast<double>(k - greater) / static_cast<double>(equal));
  }
  return hits / static_cast<double>(labels.size());
}

namespace {

// Prototypes with per-item class weights: p_c = sum_i w_i f_i / sum_i w_i
// over items of class c.
PrototypeSet weighted_prototypes(const Tensor& features, std::span<const std::size_t> labels,
                                 std::span<const double> weights, std::size_t ways) {
  const std::size_t n = labels.size();
  std::vector<double> z(ways, 0.0);
  for (std::size_t i = 0; i < n; ++i) z[labels[i]] += weights[i];
  std::vector<double> m(ways * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m[labels[i] * n + i] = weights[i] / z[labels[i]];
  PrototypeSet p;
  p.prototypes = matmul(Tensor::from({ways, n}, std::move(m)), features);
  p.counts.assign(ways, 0);
  for (auto l : labels) ++p.counts[l];
  return p;
}

struct SharedEval {
  const Model* model;
  const Dataset* dataset;
  const EvalConfig* cfg;
  AugmentPlan plan;
  std::vector<Tensor> gallery_images;
  std::vector<int> gallery_classes;
  Tensor gallery_embed;  // [G,d], for top-epsilon pools
  std::optional<Tensor> gallery_bnet;
  std::vector<std::size_t> topk;
};

std::vector<double> run_episode(const SharedEval& sh, std::size_t e) {
  const EvalConfig& cfg = *sh.cfg;
  const Model& m = *sh.model;
  Rng ep_rng = make_rng(cfg.seed, 2 * e);
  Rng aug_rng = make_rng(cfg.seed, 2 * e + 1);
  const Episode ep = sample_episode(*sh.dataset, cfg.split, cfg.ways, cfg.shots, cfg.queries, ep_rng);

  std::vector<Tensor> s_imgs, q_imgs;
  std::vector<std::size_t> s_lab, q_lab;
  for (const auto& it : ep.support) {
    s_imgs.push_back(sh.dataset->item(it.item).image);
    s_lab.push_back(it.way);
  }
  for (const auto& it : ep.query) {
    q_imgs.push_back(sh.dataset->item(it.item).image);
    q_lab.push_back(it.way);
  }
  const Tensor s_batch = stack_images(s_imgs);
  const Tensor fs = m.embed.embed(m.params, s_batch);
  const Tensor fq = m.embed.embed(m.params, stack_images(q_imgs));

  std::vector<Tensor> feats{fs};
  std::vector<std::size_t> labels = s_lab;
  std::vector<double> weights(s_lab.size(), 1.0);
  const std::size_t n_aug = cfg.n_aug;

  if (sh.plan.augment && sh.plan.baseline) {
    const BaselineKind kind = *sh.plan.baseline;
    std::vector<Tensor> extra;
    std::vector<std::size_t> extra_lab;
    std::vector<double> extra_w;
    const std::size_t copies = kind == BaselineKind::flip ? 1 : n_aug;
    for (std::size_t i = 0; i < s_imgs.size(); ++i) {
      for (std::size_t j = 0; j < copies; ++j) {
        if (kind == BaselineKind::noise_feature) {
          const std::size_t row = i;
          Tensor f = gather_rows(fs, std::span(&row, 1));
          extra.push_back(apply_baseline_augment(kind, f, aug_rng, cfg.baseline).item);
        } else {
          const Tensor* partner = nullptr;
          if (kind == BaselineKind::mixup) partner = &sh.gallery_images[uniform_index(sh.gallery_images.size(), aug_rng)];
          auto out = apply_baseline_augment(kind, s_imgs[i], aug_rng, cfg.baseline, partner);
          extra.push_back(out.item);
          extra_w.push_back(out.label_weight);
        }
        extra_lab.push_back(s_lab[i]);
      }
    }
    if (!extra.empty()) {
      if (kind == BaselineKind::noise_feature) {
        feats.push_back(concat(extra, 0));
        extra_w.assign(extra.size(), 1.0);
      } else {
        feats.push_back(m.embed.embed(m.params, stack_images(extra)));
      }
      labels.insert(labels.end(), extra_lab.begin(), extra_lab.end());
      weights.insert(weights.end(), extra_w.begin(), extra_w.end());
    }
  } else if (sh.plan.augment && n_aug > 0) {
    SynthesisInputs in;
    in.net = &m.deform;
    in.params = &m.params;
    in.mode = sh.plan.weights;
    std::vector<std::vector<std::size_t>> pools(cfg.ways);
    if (sh.plan.pool == PoolMode::support) {
      in.candidates = s_imgs;
      std::vector<std::size_t> all(s_imgs.size());
      std::iota(all.begin(), all.end(), 0);
      pools.assign(cfg.ways, all);
    } else {
      in.candidates = sh.gallery_images;
      in.candidate_features = sh.gallery_bnet;
      if (sh.plan.pool == PoolMode::random) {
        std::vector<std::size_t> all(sh.gallery_images.size());
        std::iota(all.begin(), all.end(), 0);
        pools.assign(cfg.ways, all);
      } else {
        const Tensor probs = prototype_probabilities(sh.gallery_embed, compute_prototypes(fs, s_lab, cfg.ways));
        std::vector<double> column(sh.gallery_images.size());
        for (std::size_t c = 0; c < cfg.ways; ++c) {
          for (std::size_t g = 0; g < column.size(); ++g) column[g] = probs[g * cfg.ways + c];
          pools[c] = select_class_pool(column, cfg.epsilon);
        }
      }
    }
    SynthesisResult syn = synthesize(in, s_batch, s_lab, pools, n_aug, aug_rng);
    feats.push_back(m.embed.embed(m.params, syn.images));
    labels.insert(labels.end(), syn.labels.begin(), syn.labels.end());
    weights.resize(labels.size(), 1.0);
  }

  const Tensor all = feats.size() == 1 ? feats[0] : concat(feats, 0);
  const PrototypeSet protos = weighted_prototypes(all, labels, weights, cfg.ways);
  const Tensor probs = prototype_probabilities(fq, protos);
  std::vector<double> acc;
  for (auto k : sh.topk) acc.push_back(topk_accuracy(probs.data(), cfg.ways, q_lab, k));
  return acc;
}

// Applies fn to the images in batches of 64 and stacks the row outputs.
template <class Fn>
Tensor chunked(const std::vector<Tensor>& images, Fn fn) {
  std::vector<Tensor> chunks;
  for (std::size_t s = 0; s < images.size(); s += 64) {
    const std::size_t n = std::min<std::size_t>(64, images.size() - s);
    chunks.push_back(fn(stack_images(std::span(images).subspan(s, n))));
  }
  return chunks.size() == 1 ? chunks[0] : concat(chunks, 0);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

EvalReport meta_test(const Model& model, const Dataset& dataset, const Gallery& gallery, const EvalConfig& cfg) {
  cfg.validate();
  EvalReport report;
  report.variant = cfg.variant.name();
  report.seed = cfg.seed;
  for (auto k : cfg.topk) {
    if (k <= cfg.ways) {
      report.topk.push_back(k);
    } else {
      report.notices.push_back("top-" + std::to_string(k) + " omitted: only " + std::to_string(cfg.ways) + " classes per episode");
    }
  }

  SharedEval sh{&model, &dataset, &cfg, eval_plan(cfg.variant, cfg.augment_at_test), {}, {}, {}, std::nullopt, report.topk};
  for (const auto& g : gallery.items()) {
    sh.gallery_images.push_back(g.image);
    sh.gallery_classes.push_back(g.origin_class);
  }
  const bool deforming = sh.plan.augment && !sh.plan.baseline && cfg.n_aug > 0;
  const bool needs_gallery = deforming ? sh.plan.pool != PoolMode::support : sh.plan.baseline == BaselineKind::mixup;
  if (needs_gallery && gallery.empty()) throw CapacityError("meta_test: augmentation needs a non-empty gallery");
  {
    NoGradGuard guard;
    if (deforming && sh.plan.pool == PoolMode::top_epsilon) {
      sh.gallery_embed = chunked(sh.gallery_images, [&](const Tensor& b) { return model.embed.embed(model.params, b); });
    }
    if (deforming && sh.plan.pool != PoolMode::support && sh.plan.weights == WeightMode::learned) {
      sh.gallery_bnet =
          chunked(sh.gallery_images, [&](const Tensor& b) { return model.deform.gallery_features(model.params, b); });
    }
  }

  std::vector<std::size_t> order(cfg.episodes);
  std::iota(order.begin(), order.end(), 0);
  if (cfg.shuffle_order) {
    Rng r = make_rng(cfg.seed, 0x5eed0fULL);
    std::shuffle(order.begin(), order.end(), r);
  }
  std::vector<std::vector<double>> results(cfg.episodes);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    NoGradGuard guard;
    for (std::size_t i; (i = next.fetch_add(1)) < order.size();) {
      try {
        results[order[i]] = run_episode(sh, order[i]);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = order.size();
      }
    }
  };
  const std::size_t nthreads = std::min(cfg.threads, cfg.episodes);
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  report.per_episode.assign(report.topk.size(), std::vector<double>(cfg.episodes));
  for (std::size_t e = 0; e < cfg.episodes; ++e) {
    for (std::size_t k = 0; k < report.topk.size(); ++k) report.per_episode[k][e] = results[e][k];
  }
  for (const auto& v : report.per_episode) {
    report.mean.push_back(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
    report.half_width.push_back(ci_half_width(v));
  }

  auto& c = report.config;
  c["ways"] = std::to_string(cfg.ways);
  c["shots"] = std::to_string(cfg.shots);
  c["queries"] = std::to_string(cfg.queries);
  c["episodes"] = std::to_string(cfg.episodes);
  c["n_aug"] = std::to_string(cfg.n_aug);
  c["epsilon"] = fmt_double(cfg.epsilon);
  c["augment_at_test"] = cfg.augment_at_test ? "true" : "false";
  c["split"] = split_name(cfg.split);
  c["variant"] = report.variant;
  c["grid"] = model.config.grid;
  c["gallery_size"] = std::to_string(gallery.size());
  c["gallery_hash"] = std::to_string(gallery.hash());
  return report;
}

std::string summary_line(const EvalReport& report) {
  std::ostringstream os;
  os << "variant=" << report.variant << " episodes=" << (report.per_episode.empty() ? 0 : report.per_episode[0].size());
  os << std::fixed << std::setprecision(4);
  for (std::size_t k = 0; k < report.topk.size(); ++k) {
    os << " top" << report.topk[k] << '=' << report.mean[k] << "+-" << report.half_width[k];
  }
  return os.str();
}

void write_report_json(const std::filesystem::path& path, const EvalReport& report) {
  nlohmann::ordered_json j;
  j["variant"] = report.variant;
  j["seed"] = report.seed;
  j["config"] = report.config;
  auto& metrics = j["metrics"];
  metrics = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < report.topk.size(); ++k) {
    metrics.push_back({{"k", report.topk[k]}, {"mean", report.mean[k]}, {"ci95_half_width", report.half_width[k]}});
  }
  j["notices"] = report.notices;
  ensure_parent(path);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

void write_report_tsv(const std::filesystem::path& path, const EvalReport& report) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "variant\tseed\tmetric\tmean\tci95_half_width\n";
  os << std::setprecision(17);
  for (std::size_t k = 0; k < report.topk.size(); ++k) {
    os << report.variant << '\t' << report.seed << "\ttop" << report.topk[k] << '\t' << report.mean[k] << '\t'
       << report.half_width[k] << '\n';
  }
}

void write_episode_dump(const std::filesystem::path& path, const EvalReport& report) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "episode";
  for (auto k : report.topk) os << "\ttop" << k;
  os << '\n' << std::setprecision(17);
  const std::size_t n = report.per_episode.empty() ? 0 : report.per_episode[0].size();
  for (std::size_t e = 0; e < n; ++e) {
    os << e;
    for (const auto& v : report.per_episode) os << '\t' << v[e];
    os << '\n';
  }
}

}  // namespace patchmeta

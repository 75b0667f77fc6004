#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "patchmeta/errors.hpp"
#include "patchmeta/ops.hpp"

namespace patchmeta::cli {

namespace fs = std::filesystem;

// ---- value codecs -------------------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string tok;
  std::stringstream ss(s);
  while (std::getline(ss, tok, ',')) {
    const auto a = tok.find_first_not_of(" \t");
    const auto b = tok.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(tok.substr(a, b - a + 1));
  }
  return out;
}

template <class T>
Field size_field(std::string key, std::string help, T RunConfig::*sec, std::size_t T::*member) {
  return {key, std::move(help), [=](const RunConfig& c) { return std::to_string(c.*sec.*member); },
          [=](RunConfig& c, const std::string& v) { c.*sec.*member = parse_u64(key, v); }};
}

template <class T>
Field double_field(std::string key, std::string help, T RunConfig::*sec, double T::*member) {
  return {key, std::move(help), [=](const RunConfig& c) { return fmt(c.*sec.*member); },
          [=](RunConfig& c, const std::string& v) { c.*sec.*member = parse_double(key, v); }};
}

template <class T>
Field bool_field(std::string key, std::string help, T RunConfig::*sec, bool T::*member) {
  return {key, std::move(help), [=](const RunConfig& c) { return std::string((c.*sec.*member) ? "true" : "false"); },
          [=](RunConfig& c, const std::string& v) { c.*sec.*member = parse_bool(key, v); }};
}

Field top_size(std::string key, std::string help, std::size_t RunConfig::*m) {
  return {key, std::move(help), [=](const RunConfig& c) { return std::to_string(c.*m); },
          [=](RunConfig& c, const std::string& v) { c.*m = parse_u64(key, v); }};
}

Field top_bool(std::string key, std::string help, bool RunConfig::*m) {
  return {key, std::move(help), [=](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); },
          [=](RunConfig& c, const std::string& v) { c.*m = parse_bool(key, v); }};
}

Field top_string(std::string key, std::string help, std::string RunConfig::*m) {
  return {key, std::move(help), [=](const RunConfig& c) { return c.*m; },
          [=](RunConfig& c, const std::string& v) { c.*m = v; }};
}

Field top_path(std::string key, std::string help, fs::path RunConfig::*m) {
  return {key, std::move(help), [=](const RunConfig& c) { return (c.*m).string(); },
          [=](RunConfig& c, const std::string& v) { c.*m = v; }};
}

Field sgd_fields_lr(const std::string& group, SgdConfig TrainConfig::*g) {
  const std::string key = "sgd." + group + ".lr";
  return {key, "initial learning rate of the " + group + " group",
          [=](const RunConfig& c) { return fmt((c.train.*g).lr); },
          [=](RunConfig& c, const std::string& v) { (c.train.*g).lr = parse_double(key, v); }};
}

std::vector<Field> sgd_fields(const std::string& group, SgdConfig TrainConfig::*g) {
  std::vector<Field> f{sgd_fields_lr(group, g)};
  const std::string p = "sgd." + group + ".";
  f.push_back({p + "decay", "learning-rate decay factor", [=](const RunConfig& c) { return fmt((c.train.*g).decay); },
               [=](RunConfig& c, const std::string& v) { (c.train.*g).decay = parse_double(p + "decay", v); }});
  f.push_back({p + "decay_interval", "epochs between decays",
               [=](const RunConfig& c) { return std::to_string((c.train.*g).decay_interval); },
               [=](RunConfig& c, const std::string& v) {
                 (c.train.*g).decay_interval = static_cast<int>(parse_u64(p + "decay_interval", v));
               }});
  f.push_back({p + "batch_size", "images per stage-1 step (emb) / informational (def)",
               [=](const RunConfig& c) { return std::to_string((c.train.*g).batch_size); },
               [=](RunConfig& c, const std::string& v) {
                 (c.train.*g).batch_size = static_cast<int>(parse_u64(p + "batch_size", v));
               }});
  return f;
}

std::vector<Field> build_fields() {
  using R = RunConfig;
  std::vector<Field> f;
  f.push_back(top_string("data.source", "synthetic or folder", &R::data_source));
  f.push_back(top_path("data.root", "image folder root (data.source=folder)", &R::data_root));
  f.push_back(top_path("data.manifest", "class manifest (data.source=folder)", &R::data_manifest));
  f.push_back(top_bool("data.strict", "fail on unreadable images", &R::data_strict));
  f.push_back(top_size("data.image_size", "image side in pixels", &R::image_size));

  f.push_back(size_field("gen.base_classes", "synthetic base classes", &R::gen, &SyntheticConfig::base_classes));
  f.push_back(size_field("gen.validation_classes", "synthetic validation classes", &R::gen,
                         &SyntheticConfig::validation_classes));
  f.push_back(size_field("gen.novel_classes", "synthetic novel classes", &R::gen, &SyntheticConfig::novel_classes));
  f.push_back(size_field("gen.images_per_class", "synthetic images per class", &R::gen,
                         &SyntheticConfig::images_per_class));
  f.push_back({"gen.seed", "synthetic generator seed (part of the dataset identity)",
               [](const R& c) { return std::to_string(c.gen.seed); },
               [](R& c, const std::string& v) { c.gen.seed = parse_u64("gen.seed", v); }});
  f.push_back(bool_field("gen.jitter", "per-image jitter", &R::gen, &SyntheticConfig::jitter));
  f.push_back(double_field("gen.noise", "background noise std", &R::gen, &SyntheticConfig::noise));
  f.push_back(double_field("gen.position_jitter", "max center offset (fraction of side)", &R::gen,
                           &SyntheticConfig::position_jitter));
  f.push_back(double_field("gen.scale_jitter", "relative scale jitter", &R::gen, &SyntheticConfig::scale_jitter));
  f.push_back(double_field("gen.rotation_jitter_deg", "rotation jitter (degrees)", &R::gen,
                           &SyntheticConfig::rotation_jitter_deg));
  f.push_back(double_field("gen.hue_jitter_deg", "hue jitter (degrees)", &R::gen, &SyntheticConfig::hue_jitter_deg));

  f.push_back({"model.widths", "embedding conv block widths",
               [](const R& c) { return join_sizes(c.model.embed.widths); },
               [](R& c, const std::string& v) { c.model.embed.widths = parse_sizes(v, "model.widths"); }});
  f.push_back({"model.feature_dim", "embedding dimension",
               [](const R& c) { return std::to_string(c.model.embed.feature_dim); },
               [](R& c, const std::string& v) { c.model.embed.feature_dim = parse_u64("model.feature_dim", v); }});
  f.push_back({"model.branch_widths", "ANET/BNET conv block widths",
               [](const R& c) { return join_sizes(c.model.deform.branch_widths); },
               [](R& c, const std::string& v) { c.model.deform.branch_widths = parse_sizes(v, "model.branch_widths"); }});
  f.push_back({"model.grid", "patch grid side k, or pixel", [](const R& c) { return c.model.grid; },
               [](R& c, const std::string& v) { c.model.grid = v; }});
  f.push_back({"model.sigmoid_head", "squash blend weights through a sigmoid",
               [](const R& c) { return std::string(c.model.deform.sigmoid_head ? "true" : "false"); },
               [](R& c, const std::string& v) { c.model.deform.sigmoid_head = parse_bool("model.sigmoid_head", v); }});
  f.push_back({"model.head_bias_init", "initial weight-head bias",
               [](const R& c) { return fmt(c.model.deform.head_bias_init); },
               [](R& c, const std::string& v) { c.model.deform.head_bias_init = parse_double("model.head_bias_init", v); }});

  f.push_back(size_field("train.ways", "classes per training episode", &R::train, &TrainConfig::ways));
  f.push_back(size_field("train.shots", "support images per class", &R::train, &TrainConfig::shots));
  f.push_back(size_field("train.queries", "query images per class", &R::train, &TrainConfig::queries));
  f.push_back(size_field("train.n_aug", "synthesized images per probe", &R::train, &TrainConfig::n_aug));
  f.push_back(double_field("train.epsilon", "gallery pool size in percent", &R::train, &TrainConfig::epsilon));
  f.push_back(size_field("train.episodes_per_epoch", "episodes (stage 1: batches) per epoch", &R::train,
                         &TrainConfig::episodes_per_epoch));
  f.push_back(size_field("train.stage1_epochs", "epochs with the deformation frozen", &R::train,
                         &TrainConfig::stage1_epochs));
  f.push_back(size_field("train.stage2_epochs", "epochs with the embedding frozen", &R::train,
                         &TrainConfig::stage2_epochs));
  f.push_back(size_field("train.stage3_epochs", "joint epochs", &R::train, &TrainConfig::stage3_epochs));
  f.push_back(size_field("train.gallery_per_class", "gallery images per base class", &R::train,
                         &TrainConfig::gallery_per_class));
  f.push_back(size_field("train.gallery_refresh", "stage-3 episodes between gallery re-embeddings", &R::train,
                         &TrainConfig::gallery_refresh));
  f.push_back(size_field("train.val_episodes", "validation episodes per epoch (0: off)", &R::train,
                         &TrainConfig::val_episodes));
  f.push_back(size_field("train.checkpoint_every", "epochs between checkpoints (0: final only)", &R::train,
                         &TrainConfig::checkpoint_every));
  f.push_back({"train.emb_loss", "loss updating the embedding: ce, proto, none",
               [](const R& c) { return std::string(loss_route_name(c.train.emb_loss)); },
               [](R& c, const std::string& v) { c.train.emb_loss = parse_loss_route(v); }});
  f.push_back({"train.def_loss", "loss updating the deformation: proto, ce, none",
               [](const R& c) { return std::string(loss_route_name(c.train.def_loss)); },
               [](R& c, const std::string& v) { c.train.def_loss = parse_loss_route(v); }});
  f.push_back({"train.pool", "gallery pools: top_epsilon, random, support",
               [](const R& c) { return std::string(pool_mode_name(c.train.pool)); },
               [](R& c, const std::string& v) { c.train.pool = parse_pool_mode(v); }});
  for (auto& s : sgd_fields("emb", &TrainConfig::emb)) f.push_back(std::move(s));
  for (auto& s : sgd_fields("def", &TrainConfig::def)) f.push_back(std::move(s));

  f.push_back(size_field("eval.ways", "classes per test episode", &R::eval, &EvalConfig::ways));
  f.push_back(size_field("eval.shots", "support images per class", &R::eval, &EvalConfig::shots));
  f.push_back(size_field("eval.queries", "query images per class", &R::eval, &EvalConfig::queries));
  f.push_back(size_field("eval.episodes", "test episodes", &R::eval, &EvalConfig::episodes));
  f.push_back({"eval.topk", "reported top-k values", [](const R& c) { return join_sizes(c.eval.topk); },
               [](R& c, const std::string& v) { c.eval.topk = parse_sizes(v, "eval.topk"); }});
  f.push_back(bool_field("eval.augment_at_test", "synthesize support images at test time", &R::eval,
                         &EvalConfig::augment_at_test));
  f.push_back(size_field("eval.n_aug", "synthesized images per probe", &R::eval, &EvalConfig::n_aug));
  f.push_back(double_field("eval.epsilon", "gallery pool size in percent", &R::eval, &EvalConfig::epsilon));
  f.push_back({"eval.variant", "ablation / baseline variant", [](const R& c) { return c.eval.variant.name(); },
               [](R& c, const std::string& v) { c.eval.variant = VariantSpec::parse(v); }});
  f.push_back({"eval.split", "split to test on", [](const R& c) { return std::string(split_name(c.eval.split)); },
               [](R& c, const std::string& v) { c.eval.split = parse_split(v); }});
  f.push_back(size_field("eval.threads", "evaluation worker threads", &R::eval, &EvalConfig::threads));
  f.push_back(bool_field("eval.shuffle_order", "process episodes in a seeded permuted order", &R::eval,
                         &EvalConfig::shuffle_order));
  f.push_back({"eval.pixel_sigma", "pixel-noise std on the [0,1] scale",
               [](const R& c) { return fmt(c.eval.baseline.pixel_sigma); },
               [](R& c, const std::string& v) { c.eval.baseline.pixel_sigma = parse_double("eval.pixel_sigma", v); }});
  f.push_back({"eval.feature_sigma", "feature-noise std",
               [](const R& c) { return fmt(c.eval.baseline.feature_sigma); },
               [](R& c, const std::string& v) { c.eval.baseline.feature_sigma = parse_double("eval.feature_sigma", v); }});
  f.push_back({"eval.mixup_alpha", "Beta(alpha, alpha) mixup prior",
               [](const R& c) { return fmt(c.eval.baseline.mixup_alpha); },
               [](R& c, const std::string& v) { c.eval.baseline.mixup_alpha = parse_double("eval.mixup_alpha", v); }});
  f.push_back(top_bool("eval.dump_episodes", "write per-episode accuracies", &R::dump_episodes));

  f.push_back({"run.seed", "master seed", [](const R& c) { return std::to_string(c.seed); },
               [](R& c, const std::string& v) { c.seed = parse_u64("run.seed", v); }});
  f.push_back(top_path("run.out", "output root (default $PATCHMETA_OUT or ./runs)", &R::out));
  f.push_back(top_path("run.cache", "checkpoint cache for ablate (default <out>/cache)", &R::cache));
  f.push_back(top_path("run.checkpoint", "checkpoint to evaluate / synthesize from", &R::checkpoint));

  f.push_back(top_size("synth.samples", "probe/gallery/synthesized triplets to write", &R::synth_samples));
  f.push_back(top_string("synth.force_w", "constant blend weight instead of the learned one", &R::synth_force_w));

  f.push_back(top_string("ablate.variants", "comma-separated variants", &R::ablate_variants));
  f.push_back(top_string("ablate.baselines", "comma-separated baseline variants", &R::ablate_baselines));
  f.push_back(top_string("ablate.seeds", "comma-separated seeds", &R::ablate_seeds));
  f.push_back(top_string("ablate.grid", "division schemes, e.g. 1,3,5,7,pixel", &R::ablate_grid));
  f.push_back(top_string("ablate.naug", "n_aug sweep values (empty: no sweep)", &R::ablate_naug));
  f.push_back(top_bool("ablate.train_missing", "train missing checkpoints", &R::train_missing));

  f.push_back({"dump.split", "split to export", [](const R& c) { return std::string(split_name(c.dump_split)); },
               [](R& c, const std::string& v) { c.dump_split = parse_split(v); }});
  f.push_back(top_size("dump.max_classes", "classes to export (0: all)", &R::dump_max_classes));
  f.push_back(top_size("dump.max_items", "items per class (0: all)", &R::dump_max_items));
  f.push_back(top_size("dump.synth_episodes", "episodes of probe/synthesized rows to add", &R::dump_synth_episodes));
  return f;
}

}  // namespace

RunConfig::RunConfig() {
  // Desk-scale reference defaults (see README).
  model.embed.widths = {16, 16, 16, 16};
  model.embed.feature_dim = 16;
  model.deform.branch_widths = {16, 16, 16, 16};
  train.queries = 10;
  train.episodes_per_epoch = 30;
  train.stage1_epochs = 4;
  train.stage2_epochs = 4;
  train.stage3_epochs = 8;
  train.val_episodes = 50;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = build_fields();
  return f;
}

std::string echo_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

void set_field(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      set_field(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void load_config_file(RunConfig& cfg, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path.string());
}

void finalize(RunConfig& cfg) {
  cfg.train.seed = cfg.seed;
  cfg.eval.seed = cfg.seed;
  cfg.gen.image_size = cfg.image_size;
  cfg.model.geometry = {3, cfg.image_size, cfg.image_size};
  if (cfg.data_source == "folder") {
    if (cfg.data_root.empty()) throw ConfigError("--data.root is required when data.source=folder");
    if (cfg.data_manifest.empty()) throw ConfigError("--data.manifest is required when data.source=folder");
  } else if (cfg.data_source != "synthetic") {
    throw ConfigError("--data.source must be synthetic or folder, got '" + cfg.data_source + "'");
  }
  if (cfg.image_size < 4) throw ConfigError("--data.image_size must be >= 4");
  PatchGrid::parse(cfg.model.grid, cfg.model.geometry).validate(cfg.model.geometry);
  cfg.train.validate();
  cfg.eval.validate();
  if (!cfg.synth_force_w.empty()) parse_double("synth.force_w", cfg.synth_force_w);
}

Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.data_source == "folder") {
    return ingest_folder(cfg.data_root, cfg.data_manifest, {cfg.model.geometry, cfg.data_strict});
  }
  const PatchGrid grid = PatchGrid::parse(cfg.model.grid, cfg.model.geometry);
  return generate_synthetic(cfg.gen, grid.pixel_level ? 1 : grid.rows);
}

void bind_dataset(RunConfig& cfg, const Dataset& dataset) {
  cfg.model.embed.aux_classes = dataset.classes(Split::base).size();
  if (cfg.model.embed.aux_classes == 0) throw CapacityError("dataset has no base classes");
}

fs::path output_root(const RunConfig& cfg) {
  if (!cfg.out.empty()) return cfg.out;
  if (const char* env = std::getenv("PATCHMETA_OUT"); env && *env) return env;
  return "runs";
}

fs::path make_run_dir(const RunConfig& cfg) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream name;
  name << std::put_time(&tm, "%Y%m%d-%H%M%S") << "-seed" << cfg.seed;
  const fs::path root = output_root(cfg);
  ensure_directory(root);
  fs::path dir = root / name.str();
  for (int i = 1; fs::exists(dir); ++i) dir = root / (name.str() + "-" + std::to_string(i));
  fs::create_directory(dir);
  return dir;
}

// ---- commands -------------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

fs::path prepare_run(RunConfig& cfg) {
  cfg.out = output_root(cfg);
  const fs::path run = make_run_dir(cfg);
  write_text(run / "config.txt", echo_config(cfg));
  return run;
}

Model load_model(const RunConfig& cfg, const Dataset& dataset) {
  if (cfg.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  Model m = Model::from_checkpoint(load_checkpoint(cfg.checkpoint));
  if (!(m.config.geometry == dataset.geometry())) {
    throw ConfigError("checkpoint expects " + shape_str(m.config.geometry.shape()) + " images but the dataset has " +
                      shape_str(dataset.geometry().shape()));
  }
  return m;
}

/// Gallery the checkpoint was trained with, when recorded.
Gallery gallery_for(const RunConfig& cfg, const Dataset& dataset, const fs::path& ckpt_path) {
  std::uint64_t seed = cfg.seed;
  std::size_t per_class = cfg.train.gallery_per_class;
  if (!ckpt_path.empty()) {
    const Checkpoint c = load_checkpoint(ckpt_path);
    if (auto it = c.metadata.find("gallery.seed"); it != c.metadata.end()) seed = std::stoull(it->second);
    if (auto it = c.metadata.find("gallery.per_class"); it != c.metadata.end()) per_class = std::stoul(it->second);
  }
  return build_gallery(dataset, per_class, seed);
}

int cmd_train(RunConfig& cfg, std::ostream& out) {
  const Dataset ds = load_dataset(cfg);
  bind_dataset(cfg, ds);
  const fs::path run = prepare_run(cfg);
  TrainConfig t = cfg.train;
  if (t.checkpoint_every > 0) t.checkpoint_dir = run / "checkpoints";
  out << "run directory: " << run.string() << "\n";
  const FitResult r = fit(t, cfg.model, ds, [&](const EpochRecord& e) {
    out << "epoch " << e.epoch << " stage " << e.stage << " ce " << fmt(e.ce_loss) << " proto " << fmt(e.proto_loss);
    if (e.val_top1) out << " val_top1 " << fmt(*e.val_top1);
    out << "\n" << std::flush;
  });
  write_training_report(run / "train_report.json", t, r);
  const Checkpoint ckpt = r.model.to_checkpoint({{"seed", std::to_string(cfg.seed)},
                                                  {"stage", std::to_string(r.history.empty() ? 1 : r.history.back().stage)},
                                                  {"epochs", std::to_string(r.history.size())},
                                                  {"gallery.seed", std::to_string(cfg.seed)},
                                                  {"gallery.per_class", std::to_string(t.gallery_per_class)},
                                                  {"dataset.hash", hex64(ds.hash())}});
  save_checkpoint(run / "final.ckpt", ckpt);
  write_text(run / "FINAL", "final.ckpt " + hex64(r.model.params.hash()) + "\n");
  out << "final checkpoint: " << (run / "final.ckpt").string() << " params " << hex64(r.model.params.hash()) << "\n";
  return kOk;
}

int cmd_eval(RunConfig& cfg, std::ostream& out) {
  const Dataset ds = load_dataset(cfg);
  const Model m = load_model(cfg, ds);
  const Gallery g = gallery_for(cfg, ds, cfg.checkpoint);
  const fs::path run = prepare_run(cfg);
  const EvalReport rep = meta_test(m, ds, g, cfg.eval);
  write_report_json(run / "report.json", rep);
  write_report_tsv(run / "report.tsv", rep);
  if (cfg.dump_episodes) write_episode_dump(run / "episodes.tsv", rep);
  for (const auto& n : rep.notices) out << "notice: " << n << "\n";
  out << summary_line(rep) << "\n";
  out << "run directory: " << run.string() << "\n";
  return kOk;
}

Tensor dequantized(const Tensor& image) {
  const auto q = quantize(image);
  std::vector<double> v(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) v[i] = q[i] / 255.0;
  return Tensor::from(image.shape(), std::move(v));
}

/// Top-epsilon pools of an episode's support set over the gallery.
std::vector<std::vector<std::size_t>> episode_pools(const Model& m, const Tensor& gallery_embed, const Tensor& support,
                                                    const std::vector<std::size_t>& ways_of, std::size_t ways,
                                                    double epsilon) {
  NoGradGuard guard;
  const Tensor fs = m.embed.embed(m.params, support);
  const Tensor probs = prototype_probabilities(gallery_embed, compute_prototypes(fs, ways_of, ways));
  std::vector<std::vector<std::size_t>> pools(ways);
  std::vector<double> col(gallery_embed.dim(0));
  for (std::size_t c = 0; c < ways; ++c) {
    for (std::size_t i = 0; i < col.size(); ++i) col[i] = probs[i * ways + c];
    pools[c] = select_class_pool(col, epsilon);
  }
  return pools;
}

Tensor embed_gallery(const Model& m, const Gallery& g) {
  std::vector<Tensor> imgs;
  for (const auto& it : g.items()) imgs.push_back(it.image);
  std::vector<std::vector<double>> rows = embed_rows(m.embed, m.params, imgs);
  std::vector<double> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor::from({rows.size(), m.embed.feature_dim()}, std::move(flat));
}

int cmd_synth(RunConfig& cfg, std::ostream& out) {
  const Dataset ds = load_dataset(cfg);
  const Model m = load_model(cfg, ds);
  const Gallery g = gallery_for(cfg, ds, cfg.checkpoint);
  if (g.empty()) throw CapacityError("synth: empty gallery");
  const fs::path run = prepare_run(cfg);
  const fs::path dir = run / "synth";
  ensure_directory(dir);
  const Tensor gemb = embed_gallery(m, g);
  const PatchGrid& grid = m.deform.grid();
  Rng rng = make_rng(cfg.seed, 0x5717);
  std::ofstream index(dir / "index.tsv");
  if (!index) throw IoError("cannot write " + (dir / "index.tsv").string());
  index << "sample\tclass\tprobe_item\tgallery_index\tgallery_item\tgallery_class\tgrid\tw\n";
  for (std::size_t s = 0; s < cfg.synth_samples; ++s) {
    const Episode ep = sample_episode(ds, cfg.eval.split, cfg.eval.ways, 1, 1, rng);
    std::vector<Tensor> support;
    std::vector<std::size_t> ways_of;
    for (const auto& it : ep.support) {
      support.push_back(ds.item(it.item).image);
      ways_of.push_back(it.way);
    }
    const auto pools = episode_pools(m, gemb, stack_images(support), ways_of, cfg.eval.ways, cfg.eval.epsilon);
    const std::size_t gi = pools[0][uniform_index(pools[0].size(), rng)];
    const Tensor probe = dequantized(support[0]);
    const Tensor gallery = dequantized(g[gi].image);
    Tensor w;
    if (cfg.synth_force_w.empty()) {
      NoGradGuard guard;
      w = reshape(m.deform.weights(m.params, stack_images(std::vector<Tensor>{probe}),
                                   stack_images(std::vector<Tensor>{gallery})),
                  {grid.patches()});
    } else {
      w = Tensor::full({grid.patches()}, parse_double("synth.force_w", cfg.synth_force_w));
    }
    const Tensor synth = blend_patches(probe, gallery, w, grid);
    const std::string stem = std::to_string(s);
    write_ppm(dir / (stem + "_probe.ppm"), probe);
    write_ppm(dir / (stem + "_gallery.ppm"), gallery);
    write_ppm(dir / (stem + "_synth.ppm"), synth);
    index << s << '\t' << ds.class_info(ep.support[0].class_id).name << '\t' << ep.support[0].item << '\t' << gi << '\t'
          << g[gi].item << '\t' << ds.class_info(g[gi].origin_class).name << '\t' << grid.label() << '\t';
    for (std::size_t i = 0; i < w.numel(); ++i) index << (i ? "," : "") << fmt(w[i]);
    index << '\n';
  }
  out << "wrote " << cfg.synth_samples << " triplets to " << dir.string() << "\n";
  return kOk;
}

std::vector<VariantSpec> parse_variants(const std::string& list) {
  std::vector<VariantSpec> v;
  for (const auto& s : split_list(list)) v.push_back(VariantSpec::parse(s));
  return v;
}

int cmd_ablate(RunConfig& cfg, std::ostream& out) {
  const Dataset ds = load_dataset(cfg);
  bind_dataset(cfg, ds);
  std::vector<VariantSpec> variants = parse_variants(cfg.ablate_variants);
  for (auto& b : parse_variants(cfg.ablate_baselines)) variants.push_back(b);
  for (const auto& gk : split_list(cfg.ablate_grid)) {
    if (gk == "pixel") {
      variants.push_back({Variant::pixel_level});
    } else {
      variants.push_back({Variant::grid, static_cast<std::size_t>(parse_u64("ablate.grid", gk))});
    }
  }
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(cfg.ablate_seeds)) seeds.push_back(parse_u64("ablate.seeds", s));
  std::vector<std::size_t> naug;
  for (const auto& s : split_list(cfg.ablate_naug)) naug.push_back(parse_u64("ablate.naug", s));
  if (variants.empty() && naug.empty()) throw ConfigError("--ablate.variants: nothing to run");

  CheckpointCache cache;
  cache.dir = cfg.cache.empty() ? output_root(cfg) / "cache" : cfg.cache;
  cache.train_missing = cfg.train_missing;
  cache.log = [&](const std::string& msg) { out << msg << "\n" << std::flush; };
  std::vector<AblationRow> rows;
  std::vector<SweepPoint> points;
  if (!variants.empty()) rows = run_ablation_matrix(cfg.train, cfg.model, cfg.eval, ds, variants, seeds, cache);
  if (!naug.empty()) points = sweep_naug(cfg.train, cfg.model, cfg.eval, ds, naug, cache);
  const fs::path run = prepare_run(cfg);
  if (!rows.empty()) write_ablation_table(run / "ablation.tsv", rows);
  if (!points.empty()) write_sweep_table(run / "naug.tsv", points);
  for (const auto& r : rows) out << "seed=" << r.seed << " " << summary_line(r.report) << "\n";
  for (const auto& p : points) out << "n_aug=" << p.n_aug << " " << summary_line(p.report) << "\n";
  out << "run directory: " << run.string() << "\n";
  return kOk;
}

int cmd_dump(RunConfig& cfg, std::ostream& out) {
  const Dataset ds = load_dataset(cfg);
  const Model m = load_model(cfg, ds);
  const fs::path run = prepare_run(cfg);
  std::vector<FeatureRow> rows = feature_rows(m.embed, m.params, ds, cfg.dump_split, cfg.dump_max_classes,
                                              cfg.dump_max_items);
  if (cfg.dump_synth_episodes > 0) {
    const Gallery g = gallery_for(cfg, ds, cfg.checkpoint);
    const Tensor gemb = embed_gallery(m, g);
    std::vector<Tensor> gimgs;
    for (const auto& it : g.items()) gimgs.push_back(it.image);
    Rng rng = make_rng(cfg.seed, 0xd0e5);
    for (std::size_t e = 0; e < cfg.dump_synth_episodes; ++e) {
      const Episode ep = sample_episode(ds, cfg.dump_split, cfg.eval.ways, cfg.eval.shots, 0, rng);
      std::vector<Tensor> support;
      std::vector<std::size_t> ways_of;
      for (const auto& it : ep.support) {
        support.push_back(ds.item(it.item).image);
        ways_of.push_back(it.way);
      }
      const Tensor sb = stack_images(support);
      const auto pools = episode_pools(m, gemb, sb, ways_of, cfg.eval.ways, cfg.eval.epsilon);
      NoGradGuard guard;
      SynthesisInputs in{&m.deform, &m.params, gimgs, std::nullopt, WeightMode::learned};
      const SynthesisResult syn = synthesize(in, sb, ways_of, pools, cfg.eval.n_aug, rng);
      const auto probe_f = embed_rows(m.embed, m.params, support);
      for (std::size_t i = 0; i < support.size(); ++i) {
        rows.push_back({"ep" + std::to_string(e) + "_probe" + std::to_string(i),
                        ds.class_info(ep.support[i].class_id).name, FeatureTag::probe, probe_f[i]});
      }
      const Tensor f = m.embed.embed(m.params, syn.images);
      const std::size_t d = f.dim(1);
      for (std::size_t j = 0; j < syn.size(); ++j) {
        const auto& pv = syn.provenance[j];
        std::vector<double> row(f.data().begin() + j * d, f.data().begin() + (j + 1) * d);
        rows.push_back({"ep" + std::to_string(e) + "_probe" + std::to_string(pv.probe) + "_syn" + std::to_string(j),
                        ds.class_info(ep.support[pv.probe].class_id).name, FeatureTag::synthesized, std::move(row)});
      }
    }
  }
  write_feature_csv(run / "features.csv", rows);
  out << "wrote " << rows.size() << " feature rows to " << (run / "features.csv").string() << "\n";
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"patchmeta: learned patch-blending augmentation for one-shot classification"};
  app.require_subcommand(1);
  std::map<std::string, std::string> values;
  std::string config_path;
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print every configuration key and exit");

  struct Shortcut {
    const char* flag;
    const char* key;
    const char* help;
  };
  const Shortcut shortcuts[] = {
      {"--seed", "run.seed", "master seed"},
      {"--out", "run.out", "output root"},
      {"--checkpoint", "run.checkpoint", "checkpoint file"},
      {"--threads", "eval.threads", "evaluation worker threads"},
      {"--variant", "eval.variant", "evaluation variant"},
      {"--grid", "ablate.grid", "division schemes for ablate (e.g. 1,3,5,7,pixel)"},
      {"--force-w", "synth.force_w", "constant blend weight for synth"},
      {"--cache", "run.cache", "checkpoint cache directory"},
  };
  std::map<std::string, std::string> shortcut_values;
  bool train_missing = false;

  const std::pair<const char*, const char*> commands[] = {
      {"train", "run the three-stage training schedule"},
      {"eval", "meta-test a checkpoint"},
      {"synth", "write probe/gallery/synthesized triplets"},
      {"ablate", "ablation matrix, baselines and n_aug sweep"},
      {"dump-features", "export embedding features as CSV"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "flat key = value configuration file");
    for (const auto& f : fields()) sub->add_option("--" + f.key, values[f.key], f.help);
    for (const auto& s : shortcuts) sub->add_option(s.flag, shortcut_values[s.key], s.help);
    sub->add_flag("--train-missing", train_missing, "train checkpoints that are not cached");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }
  if (list_keys) {
    out << echo_config(RunConfig{});
    return kOk;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) load_config_file(cfg, config_path);
    CLI::App* sub = app.get_subcommands().front();
    for (const auto& f : fields()) {
      if (sub->count("--" + f.key)) set_field(cfg, f.key, values[f.key]);
    }
    for (const auto& s : shortcuts) {
      if (sub->count(s.flag)) set_field(cfg, s.key, shortcut_values[s.key]);
    }
    if (train_missing) cfg.train_missing = true;
    finalize(cfg);

    const std::string cmd = sub->get_name();
    if (cmd == "train") return cmd_train(cfg, out);
    if (cmd == "eval") return cmd_eval(cfg, out);
    if (cmd == "synth") return cmd_synth(cfg, out);
    if (cmd == "ablate") return cmd_ablate(cfg, out);
    return cmd_dump(cfg, out);
  } catch (const ConfigError& e) {
    err << "error: invalid configuration: " << e.what() << "\n";
    return kConfigError;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DependencyError& e) {
    err << "error: missing dependency: " << e.what() << "\n";
    return kDependencyError;
  } catch (const IntegrityError& e) {
    err << "error: integrity: " << e.what() << "\n";
    return kDependencyError;
  } catch (const Error& e) {
    err << "error: " << e.kind() << ": " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace patchmeta::cli

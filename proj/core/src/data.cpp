#include "patchmeta/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

#include "patchmeta/errors.hpp"

namespace patchmeta {

const char* split_name(Split s) {
  switch (s) {
    case Split::base: return "base";
    case Split::validation: return "validation";
    case Split::novel: return "novel";
  }
  return "?";
}

Split parse_split(const std::string& name) {
  if (name == "base") return Split::base;
  if (name == "validation") return Split::validation;
  if (name == "novel") return Split::novel;
  throw ConfigError("unknown split '" + name + "' (expected base|validation|novel)");
}

int Dataset::add_class(std::string name, Split split) {
  for (const auto& c : classes_) {
    if (c.name == name) throw ConfigError("duplicate class name '" + name + "'");
  }
  classes_.push_back({std::move(name), split});
  by_class_.emplace_back();
  return static_cast<int>(classes_.size() - 1);
}

void Dataset::add_item(Tensor image, int class_id) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= classes_.size()) {
    throw UsageError("add_item: unknown class id " + std::to_string(class_id));
  }
  if (image.shape() != geometry_.shape()) {
    throw ShapeError("add_item: image " + shape_str(image.shape()) + " does not match dataset geometry " +
                     shape_str(geometry_.shape()));
  }
  by_class_[static_cast<std::size_t>(class_id)].push_back(items_.size());
  items_.push_back({std::move(image), class_id});
}

std::vector<int> Dataset::classes(Split split) const {
  std::vector<int> out;
  for (std::size_t c = 0; c < classes_.size(); ++c) {
    if (classes_[c].split == split) out.push_back(static_cast<int>(c));
  }
  return out;
}

const std::vector<std::size_t>& Dataset::items_of(int class_id) const {
  return by_class_.at(static_cast<std::size_t>(class_id));
}

std::size_t Dataset::base_index(int class_id) const {
  if (class_info(class_id).split != Split::base) {
    throw UsageError("class " + class_info(class_id).name + " is not a base class");
  }
  std::size_t idx = 0;
  for (int c = 0; c < class_id; ++c) {
    if (classes_[static_cast<std::size_t>(c)].split == Split::base) ++idx;
  }
  return idx;
}

void Dataset::require_divisible(std::size_t rows, std::size_t cols) const {
  if (rows == 0 || cols == 0 || geometry_.height % rows != 0 || geometry_.width % cols != 0) {
    std::ostringstream os;
    os << "image size " << geometry_.height << "x" << geometry_.width << " is not divisible by the "
       << rows << "x" << cols << " patch grid";
    throw ConfigError(os.str());
  }
}

std::uint64_t Dataset::hash() const {
  Fnv1a h;
  h.update_value(geometry_.channels);
  h.update_value(geometry_.height);
  h.update_value(geometry_.width);
  for (const auto& c : classes_) {
    h.update(c.name);
    h.update_value(static_cast<int>(c.split));
  }
  for (const auto& it : items_) {
    h.update_value(it.class_id);
    h.update(std::as_bytes(it.image.data()));
  }
  return h.digest();
}

// ---- synthetic generator -----------------------------------------------------

SyntheticConfig synthetic_defaults(std::size_t n_classes, std::size_t images_per_class,
                                   std::size_t image_size, std::uint64_t seed) {
  if (n_classes < 10) throw ConfigError("synthetic: n_classes must be >= 10");
  SyntheticConfig cfg;
  cfg.base_classes = (n_classes * 2 + 1) / 3;
  cfg.validation_classes = (n_classes * 2 + 7) / 15;
  cfg.novel_classes = n_classes - cfg.base_classes - cfg.validation_classes;
  cfg.images_per_class = images_per_class;
  cfg.image_size = image_size;
  cfg.seed = seed;
  return cfg;
}

namespace {

constexpr int kShapes = 6;
constexpr int kTextures = 5;
constexpr int kHueBands = 4;

struct ClassRecipe {
  int shape;
  int texture;
  int hue_band;
};

// Shape membership in the shape's local frame (unit radius).
bool inside_shape(int shape, double x, double y) {
  const double r = std::hypot(x, y);
  switch (shape) {
    case 0: return r < 1.0;
    case 1: return std::max(std::abs(x), std::abs(y)) < 0.82;
    case 2: {  // upward triangle
      return y < 0.6 && y > -0.9 + 1.7 * std::abs(x) / 1.0 && std::abs(x) < 1.0;
    }
    case 3: return (std::abs(x) < 0.32 && std::abs(y) < 1.0) || (std::abs(y) < 0.32 && std::abs(x) < 1.0);
    case 4: return r < 1.0 && r > 0.55;
    case 5: return std::abs(x) + std::abs(y) < 1.1;
  }
  return false;
}

// 1 = bright tone, 0 = dark tone.
bool texture_on(int texture, double x, double y) {
  constexpr double pi = std::numbers::pi;
  switch (texture) {
    case 0: return true;
    case 1: return std::sin(pi * 3.0 * y) > 0.0;
    case 2: return std::sin(pi * 2.5 * x) * std::sin(pi * 2.5 * y) > 0.0;
    case 3: return std::cos(pi * 3.0 * x) * std::cos(pi * 3.0 * y) < 0.3;
    case 4: return std::sin(pi * 4.0 * std::hypot(x, y)) > 0.0;
  }
  return true;
}

void hsv_to_rgb(double h_deg, double s, double v, double rgb[3]) {
  h_deg = std::fmod(std::fmod(h_deg, 360.0) + 360.0, 360.0);
  const double c = v * s;
  const double hp = h_deg / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp)) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

Tensor render(const ClassRecipe& recipe, const SyntheticConfig& cfg, Rng& rng) {
  const std::size_t n = cfg.image_size;
  const double side = static_cast<double>(n);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  double cx = 0.5 * side, cy = 0.5 * side, scale = 0.3 * side, angle = 0.0;
  double hue = 45.0 + 90.0 * recipe.hue_band;
  double background = 0.35;
  if (cfg.jitter) {
    cx += unit(rng) * cfg.position_jitter * side;
    cy += unit(rng) * cfg.position_jitter * side;
    scale *= 1.0 + unit(rng) * cfg.scale_jitter;
    angle = unit(rng) * cfg.rotation_jitter_deg * std::numbers::pi / 180.0;
    hue += unit(rng) * cfg.hue_jitter_deg;
    background = 0.2 + 0.4 * (0.5 * (unit(rng) + 1.0));
  }
  double bright[3], dark[3];
  hsv_to_rgb(hue, 0.85, 0.95, bright);
  hsv_to_rgb(hue, 0.85, 0.45, dark);

  const double ca = std::cos(angle), sa = std::sin(angle);
  std::vector<double> px(3 * n * n);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  constexpr int kSuper = 2;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      double acc[3] = {0, 0, 0};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double fx = (static_cast<double>(x) + (sx + 0.5) / kSuper - cx) / scale;
          const double fy = (static_cast<double>(y) + (sy + 0.5) / kSuper - cy) / scale;
          const double lx = ca * fx + sa * fy;
          const double ly = -sa * fx + ca * fy;
          for (int c = 0; c < 3; ++c) {
            double v = background;
            if (inside_shape(recipe.shape, lx, ly)) v = texture_on(recipe.texture, lx, ly) ? bright[c] : dark[c];
            acc[c] += v;
          }
        }
      }
      for (std::size_t c = 0; c < 3; ++c) {
        double v = acc[c] / (kSuper * kSuper);
        if (cfg.jitter && cfg.noise > 0.0) v += noise(rng);
        px[(c * n + y) * n + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return Tensor::from({3, n, n}, std::move(px));
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg, std::size_t grid) {
  const std::size_t total = cfg.total_classes();
  if (total < 10) throw ConfigError("synthetic: at least 10 classes required, got " + std::to_string(total));
  if (cfg.base_classes == 0 || cfg.novel_classes == 0) throw ConfigError("synthetic: base and novel splits must be non-empty");
  if (total > static_cast<std::size_t>(kShapes * kTextures * kHueBands)) {
    throw ConfigError("synthetic: at most " + std::to_string(kShapes * kTextures * kHueBands) + " classes supported");
  }
  if (cfg.images_per_class == 0) throw ConfigError("synthetic: images_per_class must be >= 1");
  if (cfg.image_size < 8) throw ConfigError("synthetic: image_size must be >= 8");
  if (grid == 0 || cfg.image_size % grid != 0) {
    throw ConfigError("synthetic: image_size " + std::to_string(cfg.image_size) +
                      " not divisible by grid " + std::to_string(grid));
  }

  Rng rng = make_rng(cfg.seed, 0);
  std::vector<std::size_t> combos(kShapes * kTextures * kHueBands);
  for (std::size_t i = 0; i < combos.size(); ++i) combos[i] = i;
  combos = sample_without_replacement(std::move(combos), total, rng);

  Dataset ds({3, cfg.image_size, cfg.image_size});
  for (std::size_t c = 0; c < total; ++c) {
    const auto code = static_cast<int>(combos[c]);
    const ClassRecipe recipe{code % kShapes, (code / kShapes) % kTextures, code / (kShapes * kTextures)};
    const Split split = c < cfg.base_classes ? Split::base
                        : c < cfg.base_classes + cfg.validation_classes ? Split::validation
                                                                         : Split::novel;
    std::ostringstream name;
    name << "c" << (c < 10 ? "0" : "") << c << "_s" << recipe.shape << "t" << recipe.texture << "h" << recipe.hue_band;
    const int id = ds.add_class(name.str(), split);
    Rng img_rng = make_rng(cfg.seed, 1000 + c);
    for (std::size_t i = 0; i < cfg.images_per_class; ++i) ds.add_item(render(recipe, cfg, img_rng), id);
  }
  return ds;
}

// ---- raster I/O ------------------------------------------------------------------

void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) ensure_directory(path.parent_path());
}

std::vector<std::uint8_t> quantize(const Tensor& image) {
  if (image.ndim() != 3) throw ShapeError("quantize: expected [C,H,W], got " + shape_str(image.shape()));
  std::vector<std::uint8_t> out(image.numel());
  auto d = image.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(d[i], 0.0, 1.0) * 255.0));
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.ndim() != 3 || (image.dim(0) != 3 && image.dim(0) != 1)) {
    throw ShapeError("write_ppm: expected [3,H,W] or [1,H,W], got " + shape_str(image.shape()));
  }
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto q = quantize(image);
  std::vector<char> raster(3 * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = ch == 1 ? 0 : c;
        raster[(y * w + x) * 3 + c] = static_cast<char>(q[(src * h + y) * w + x]);
      }
    }
  }
  ensure_parent(path);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P6\n" << w << ' ' << h << "\n255\n";
  os.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!os) throw IoError("short write on " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    while (is >> std::ws && is.peek() == '#') {
      std::string comment;
      std::getline(is, comment);
    }
    is >> t;
    return t;
  };
  if (token() != "P6") throw IoError(path.string() + ": not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PPM header");
  }
  if (w == 0 || h == 0 || maxval != 255) throw IoError(path.string() + ": unsupported PPM geometry or maxval");
  is.get();
  std::vector<unsigned char> raster(3 * w * h);
  is.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (static_cast<std::size_t>(is.gcount()) != raster.size()) throw IoError(path.string() + ": truncated raster");
  std::vector<double> px(raster.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) px[(c * h + y) * w + x] = raster[(y * w + x) * 3 + c] / 255.0;
    }
  }
  return Tensor::from({3, h, w}, std::move(px));
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image;
  std::vector<double> out(ch * height * width);
  auto d = image.data();
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = std::clamp((y + 0.5) * static_cast<double>(h) / height - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = std::clamp((x + 0.5) * static_cast<double>(w) / width - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (std::size_t c = 0; c < ch; ++c) {
        const double* p = d.data() + c * h * w;
        const double top = p[y0 * w + x0] * (1 - fx) + p[y0 * w + x1] * fx;
        const double bot = p[y1 * w + x0] * (1 - fx) + p[y1 * w + x1] * fx;
        out[(c * height + y) * width + x] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return Tensor::from({ch, height, width}, std::move(out));
}

std::vector<std::pair<std::string, Split>> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read manifest " + path.string());
  std::vector<std::pair<std::string, Split>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string name, split, extra;
    if (!(ls >> name)) continue;
    if (!(ls >> split) || (ls >> extra)) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected '<class_name> <base|validation|novel>'");
    }
    try {
      out.emplace_back(name, parse_split(split));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const Dataset& dataset) {
  ensure_parent(path);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest " + path.string());
  for (std::size_t c = 0; c < dataset.class_count(); ++c) {
    const auto& info = dataset.class_info(static_cast<int>(c));
    os << info.name << ' ' << split_name(info.split) << '\n';
  }
}

Dataset ingest_folder(const std::filesystem::path& root, const std::filesystem::path& manifest,
                      const IngestOptions& options) {
  namespace fs = std::filesystem;
  const auto entries = read_manifest(manifest);
  Dataset ds(options.geometry);
  for (const auto& [name, split] : entries) {
    const fs::path dir = root / name;
    if (!fs::is_directory(dir)) throw IoError("class '" + name + "' listed in manifest but missing under " + root.string());
    const int id = ds.add_class(name, split);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Tensor img;
      try {
        img = read_ppm(f);
      } catch (const IoError& err) {
        if (options.strict) throw;
        std::cerr << "warning: skipping " << f.string() << ": " << err.what() << '\n';
        continue;
      }
      img = resize_bilinear(img, options.geometry.height, options.geometry.width);
      if (options.geometry.channels == 1) {
        std::vector<double> gray(options.geometry.height * options.geometry.width);
        const std::size_t plane = gray.size();
        for (std::size_t i = 0; i < plane; ++i) gray[i] = (img[i] + img[plane + i] + img[2 * plane + i]) / 3.0;
        img = Tensor::from({1, options.geometry.height, options.geometry.width}, std::move(gray));
      }
      ds.add_item(std::move(img), id);
    }
  }
  return ds;
}

void export_folder(const Dataset& dataset, const std::filesystem::path& root) {
  for (std::size_t c = 0; c < dataset.class_count(); ++c) {
    const auto id = static_cast<int>(c);
    const auto& idx = dataset.items_of(id);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::ostringstream file;
      file << std::setw(4) << std::setfill('0') << k << ".ppm";
      write_ppm(root / dataset.class_info(id).name / file.str(), dataset.item(idx[k]).image);
    }
  }
  write_manifest(root / "manifest.txt", dataset);
}

// ---- sampling ----------------------------------------------------------------------

std::size_t uniform_index(std::size_t n, Rng& rng) {
  if (n == 0) throw CapacityError("uniform_index: empty range");
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
  if (k > pool.size()) {
    throw CapacityError("cannot draw " + std::to_string(k) + " distinct items from " + std::to_string(pool.size()));
  }
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + uniform_index(pool.size() - i, rng);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

Episode sample_episode(const Dataset& dataset, Split split, std::size_t ways, std::size_t shots,
                       std::size_t queries, Rng& rng) {
  if (ways == 0 || shots == 0) throw ConfigError("episode: N and m must be >= 1");
  const auto classes = dataset.classes(split);
  if (classes.size() < ways) {
    throw CapacityError(std::string("episode: split ") + split_name(split) + " has " + std::to_string(classes.size()) +
                        " classes, " + std::to_string(ways) + "-way episode needs " + std::to_string(ways));
  }
  std::vector<std::size_t> positions(classes.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  const auto picked = sample_without_replacement(std::move(positions), ways, rng);

  Episode ep;
  ep.shots = shots;
  ep.queries = queries;
  for (std::size_t way = 0; way < ways; ++way) {
    const int cls = classes[picked[way]];
    ep.classes.push_back(cls);
    const auto& items = dataset.items_of(cls);
    if (items.size() < shots + queries) {
      throw CapacityError("episode: class " + dataset.class_info(cls).name + " has " + std::to_string(items.size()) +
                          " images, needs " + std::to_string(shots + queries) + " (m + q)");
    }
    const auto chosen = sample_without_replacement(items, shots + queries, rng);
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      (i < shots ? ep.support : ep.query).push_back({chosen[i], cls, way});
    }
  }
  return ep;
}

// ---- gallery ----------------------------------------------------------------------

std::uint64_t Gallery::hash() const {
  Fnv1a h;
  h.update_value(seed_);
  for (const auto& g : items_) {
    h.update_value(g.origin_class);
    h.update_value(static_cast<std::uint64_t>(g.item));
    h.update(std::as_bytes(g.image.data()));
  }
  return h.digest();
}

Gallery build_gallery(const Dataset& dataset, std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw ConfigError("gallery: per_class must be >= 1");
  Rng rng = make_rng(seed, 0x6a11e7);
  std::vector<GalleryItem> items;
  for (int cls : dataset.classes(Split::base)) {
    const auto& pool = dataset.items_of(cls);
    if (pool.size() < per_class) {
      throw CapacityError("gallery: base class " + dataset.class_info(cls).name + " has " +
                          std::to_string(pool.size()) + " images, needs " + std::to_string(per_class));
    }
    for (std::size_t idx : sample_without_replacement(pool, per_class, rng)) {
      items.push_back({dataset.item(idx).image, cls, idx});
    }
  }
  if (items.empty()) throw CapacityError("gallery: dataset has no base classes");
  return Gallery(std::move(items), seed);
}

std::size_t pool_size(std::size_t gallery_size, double epsilon_percent) {
  if (!(epsilon_percent > 0.0 && epsilon_percent <= 100.0)) {
    throw ConfigError("epsilon must be in (0, 100], got " + std::to_string(epsilon_percent));
  }
  const double exact = epsilon_percent * static_cast<double>(gallery_size) / 100.0;
  // Guard against representation error (e.g. 2% of 400 evaluating to 8.000000001).
  auto size = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  return std::clamp<std::size_t>(size, 1, gallery_size);
}

std::vector<std::size_t> select_class_pool(std::span<const double> scores, double epsilon_percent) {
  if (scores.empty()) throw CapacityError("select_class_pool: empty gallery");
  const std::size_t k = pool_size(scores.size(), epsilon_percent);
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> select_class_pool(const Gallery& gallery,
                                           const std::function<double(const Tensor&)>& scorer,
                                           double epsilon_percent) {
  if (gallery.empty()) throw CapacityError("select_class_pool: empty gallery");
  std::vector<double> scores;
  scores.reserve(gallery.size());
  for (const auto& g : gallery.items()) scores.push_back(scorer(g.image));
  return select_class_pool(scores, epsilon_percent);
}

Tensor stack_images(std::span<const Tensor> images) {
  if (images.empty()) throw ShapeError("stack_images: no images");
  const Shape& s = images[0].shape();
  std::vector<double> out;
  out.reserve(images.size() * images[0].numel());
  for (const auto& img : images) {
    if (img.shape() != s) throw ShapeError("stack_images: image " + shape_str(img.shape()) + " differs from " + shape_str(s));
    out.insert(out.end(), img.data().begin(), img.data().end());
  }
  Shape bs{images.size()};
  bs.insert(bs.end(), s.begin(), s.end());
  return Tensor::from(std::move(bs), std::move(out));
}

}  // namespace patchmeta

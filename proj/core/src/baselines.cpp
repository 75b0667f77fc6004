#include "patchmeta/baselines.hpp"

#include <algorithm>
#include <random>

#include "patchmeta/errors.hpp"

namespace patchmeta {

const char* baseline_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::flip: return "flip";
    case BaselineKind::noise_pixel: return "noise_pixel";
    case BaselineKind::noise_feature: return "noise_feature";
    case BaselineKind::mixup: return "mixup";
  }
  return "?";
}

BaselineKind parse_baseline(const std::string& name) {
  if (name == "flip") return BaselineKind::flip;
  if (name == "noise_pixel") return BaselineKind::noise_pixel;
  if (name == "noise_feature") return BaselineKind::noise_feature;
  if (name == "mixup") return BaselineKind::mixup;
  throw UsageError("unknown baseline augmentation '" + name + "'");
}

Tensor flip_horizontal(const Tensor& image) {
  if (image.ndim() != 3) throw ShapeError("flip: expected [C,H,W], got " + shape_str(image.shape()));
  const std::size_t rows = image.dim(0) * image.dim(1), w = image.dim(2);
  std::vector<double> out(image.numel());
  auto d = image.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = d[r * w + (w - 1 - x)];
  }
  return Tensor::from(image.shape(), std::move(out));
}

Tensor add_pixel_noise(const Tensor& image, double sigma, Rng& rng) {
  std::normal_distribution<double> n(0.0, sigma);
  std::vector<double> out(image.data().begin(), image.data().end());
  for (auto& v : out) v = std::clamp(v + n(rng), 0.0, 1.0);
  return Tensor::from(image.shape(), std::move(out));
}

Tensor add_feature_noise(const Tensor& features, double sigma, Rng& rng) {
  std::normal_distribution<double> n(0.0, sigma);
  std::vector<double> out(features.data().begin(), features.data().end());
  for (auto& v : out) v += n(rng);
  return Tensor::from(features.shape(), std::move(out));
}

Tensor mixup_images(const Tensor& a, const Tensor& b, double lambda) {
  if (a.shape() != b.shape()) throw ShapeError("mixup: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = lambda * a[i] + (1.0 - lambda) * b[i];
  return Tensor::from(a.shape(), std::move(out));
}

std::vector<double> mixup_labels(double lambda) { return {lambda, 1.0 - lambda}; }

double sample_beta(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("mixup alpha must be > 0");
  std::gamma_distribution<double> g(alpha, 1.0);
  const double x = g(rng), y = g(rng);
  return (x + y) > 0.0 ? x / (x + y) : 0.5;
}

BaselineOutput apply_baseline_augment(BaselineKind kind, const Tensor& item, Rng& rng, const BaselineParams& params,
                                      const Tensor* partner) {
  switch (kind) {
    case BaselineKind::flip: return {flip_horizontal(item)};
    case BaselineKind::noise_pixel: return {add_pixel_noise(item, params.pixel_sigma, rng)};
    case BaselineKind::noise_feature: return {add_feature_noise(item, params.feature_sigma, rng)};
    case BaselineKind::mixup: {
      if (!partner) throw UsageError("mixup needs a partner image");
      const double lambda = sample_beta(params.mixup_alpha, rng);
      return {mixup_images(item, *partner, lambda), lambda, lambda};
    }
  }
  throw UsageError("unknown baseline kind");
}

}  // namespace patchmeta

#pragma once

#include <span>
#include <string>
#include <vector>

#include "patchmeta/rng.hpp"
#include "patchmeta/tensor.hpp"

namespace patchmeta {

/// Classic augmentations compared against learned deformation.
enum class BaselineKind { flip, noise_pixel, noise_feature, mixup };

const char* baseline_name(BaselineKind kind);
BaselineKind parse_baseline(const std::string& name);

struct BaselineParams {
  /// N(0,10) on 0..255 pixels, rescaled to the [0,1] domain.
  double pixel_sigma = 10.0 / 255.0;
  double feature_sigma = 0.3;
  /// Beta(alpha, alpha) prior for the mixup coefficient.
  double mixup_alpha = 0.4;
};

/// Horizontal mirror of a [C,H,W] image.
Tensor flip_horizontal(const Tensor& image);
/// Additive per-pixel Gaussian noise, clamped to [0,1].
Tensor add_pixel_noise(const Tensor& image, double sigma, Rng& rng);
/// Additive per-dimension Gaussian noise (no clamping).
Tensor add_feature_noise(const Tensor& features, double sigma, Rng& rng);
/// lambda * a + (1 - lambda) * b.
Tensor mixup_images(const Tensor& a, const Tensor& b, double lambda);
/// Soft label over two classes: (lambda, 1 - lambda).
std::vector<double> mixup_labels(double lambda);
/// Draw from Beta(alpha, alpha) via two Gamma variates.
double sample_beta(double alpha, Rng& rng);

struct BaselineOutput {
  Tensor item;
  /// Weight of the item in its probe's class (1 except for mixup).
  double label_weight = 1.0;
  double lambda = 1.0;
};

/// Dispatcher used by the evaluation harness. `partner` is the gallery image
/// for mixup and ignored otherwise.
BaselineOutput apply_baseline_augment(BaselineKind kind, const Tensor& item, Rng& rng,
                                      const BaselineParams& params = {}, const Tensor* partner = nullptr);

}  // namespace patchmeta

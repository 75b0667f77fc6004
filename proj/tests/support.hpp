#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "patchmeta/data.hpp"
#include "patchmeta/model.hpp"
#include "patchmeta/ops.hpp"
#include "patchmeta/trainer.hpp"

namespace testsupport {

using namespace patchmeta;

/// seq[i] = sin(a * i + b); the same sequence the numpy oracle uses.
inline std::vector<double> seq(std::size_t n, double a, double b) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::sin(a * static_cast<double>(i) + b);
  return v;
}

inline Tensor seq_tensor(Shape shape, double a, double b, double gain = 1.0) {
  auto v = seq(numel(shape), a, b);
  for (auto& x : v) x *= gain;
  return Tensor::from(std::move(shape), std::move(v));
}

inline std::vector<double> uniform(std::size_t n, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

/// Values bounded away from zero (keeps relu kinks out of finite differences).
inline std::vector<double> away_from_zero(std::size_t n, Rng& rng) {
  auto v = uniform(n, 0.1, 1.0, rng);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : v) x = sign(rng) ? x : -x;
  return v;
}

/// |analytic - numeric| / max(|analytic| + |numeric|, 1e-6).
inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
}

struct GradReport {
  double worst = 0.0;
  std::size_t checked = 0;
};

/// Central finite differences (step h) against the tape for every input
/// coordinate of f. Non-scalar outputs are projected on a fixed random
/// direction so every output entry contributes.
inline GradReport gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Tensor> leaves,
                            Rng& rng, double h = 1e-5) {
  const Tensor probe = f(leaves);
  const Tensor dir = Tensor::from(probe.shape(), uniform(probe.numel(), -1.0, 1.0, rng));
  auto loss_of = [&](const std::vector<Tensor>& in) { return sum(mul(f(in), dir)); };
  const Tensor loss = loss_of(leaves);
  backward(loss, kFreeGrad);
  GradReport rep;
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) continue;
    const std::vector<double> g(leaf.grad().begin(), leaf.grad().end());
    for (std::size_t i = 0; i < leaf.numel(); ++i) {
      const double orig = leaf.mutable_data()[i];
      double up = 0.0, down = 0.0;
      {
        NoGradGuard guard;
        leaf.mutable_data()[i] = orig + h;
        up = loss_of(leaves).item();
        leaf.mutable_data()[i] = orig - h;
        down = loss_of(leaves).item();
      }
      leaf.mutable_data()[i] = orig;
      rep.worst = std::max(rep.worst, rel_err(g.empty() ? 0.0 : g[i], (up - down) / (2.0 * h)));
      ++rep.checked;
    }
  }
  return rep;
}

/// Same check over named parameters of a ParameterSet; `coords` entries per
/// parameter are sampled (all when the tensor is smaller).
inline GradReport gradcheck_params(ParameterSet& params, const std::function<Tensor()>& loss_fn, GroupMask mask,
                                   Rng& rng, std::size_t coords = 4, double h = 1e-5) {
  params.zero_grad();
  const Tensor loss = loss_fn();
  params.backward(loss, mask);
  GradReport rep;
  for (const auto& name : params.names()) {
    if (!(mask_of(params.group_of(name)) & mask)) continue;
    Tensor& p = params.get(name);
    const std::vector<double> g(p.grad().begin(), p.grad().end());
    std::vector<std::size_t> idx(p.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(coords, idx.size()));
    for (std::size_t i : idx) {
      const double orig = p.mutable_data()[i];
      double up = 0.0, down = 0.0;
      {
        NoGradGuard guard;
        p.mutable_data()[i] = orig + h;
        up = loss_fn().item();
        p.mutable_data()[i] = orig - h;
        down = loss_fn().item();
      }
      p.mutable_data()[i] = orig;
      rep.worst = std::max(rep.worst, rel_err(g.empty() ? 0.0 : g[i], (up - down) / (2.0 * h)));
      ++rep.checked;
    }
  }
  params.zero_grad();
  return rep;
}

/// Random inputs for one finite-difference instance of an op kind.
inline std::vector<Tensor> op_instance(OpKind kind, int inst, Rng& rng, OpAttrs& attrs) {
  auto leaf = [](Shape s, std::vector<double> v) { return Tensor::leaf(std::move(s), std::move(v), kFreeGrad); };
  switch (kind) {
    case OpKind::conv2d:
      attrs.padding = static_cast<std::size_t>(inst % 2);
      return {leaf({2, 2, 5, 4}, uniform(80, -1, 1, rng)), leaf({3, 2, 3, 3}, uniform(54, -1, 1, rng)),
              leaf({3}, uniform(3, -1, 1, rng))};
    case OpKind::linear:
      return {leaf({3, 4}, uniform(12, -1, 1, rng)), leaf({5, 4}, uniform(20, -1, 1, rng)),
              leaf({5}, uniform(5, -1, 1, rng))};
    case OpKind::relu: return {leaf({3, 4}, away_from_zero(12, rng))};
    case OpKind::max_pool: return {leaf({2, 2, 4, 6}, uniform(96, -1, 1, rng))};
    case OpKind::global_average_pool: return {leaf({2, 3, 3, 4}, uniform(72, -1, 1, rng))};
    case OpKind::concat:
      attrs.axis = 0;
      return {leaf({2, 3}, uniform(6, -1, 1, rng)), leaf({4, 3}, uniform(12, -1, 1, rng))};
    case OpKind::add:
    case OpKind::elementwise_mul:
      return {leaf({3, 4}, uniform(12, -1, 1, rng)), leaf({3, 4}, uniform(12, -1, 1, rng))};
    case OpKind::scalar_mul:
      attrs.scalar = uniform(1, -2, 2, rng)[0];
      return {leaf({3, 4}, uniform(12, -1, 1, rng))};
    case OpKind::softmax: return {leaf({3, 5}, uniform(15, -3, 3, rng))};
    case OpKind::log: return {leaf({3, 4}, uniform(12, 0.2, 2.0, rng))};
    case OpKind::exp: return {leaf({3, 4}, uniform(12, -2, 2, rng))};
    case OpKind::squared_euclidean_distance:
      return {leaf({4, 3}, uniform(12, -1, 1, rng)), leaf({2, 3}, uniform(6, -1, 1, rng))};
    case OpKind::reshape:
      attrs.shape = {2, 6};
      return {leaf({3, 4}, uniform(12, -1, 1, rng))};
    case OpKind::patch_blend:
      attrs.grid_rows = 3;
      attrs.grid_cols = 3;
      return {leaf({2, 2, 6, 6}, uniform(144, 0, 1, rng)), leaf({2, 2, 6, 6}, uniform(144, 0, 1, rng)),
              leaf({2, 9}, uniform(18, -0.5, 1.5, rng))};
  }
  return {};
}

/// Differentiable helpers outside the OpKind dispatcher, each taking two
/// [3,4] inputs.
inline std::vector<std::pair<std::string, std::function<Tensor(const std::vector<Tensor>&)>>> aux_ops() {
  static const std::vector<std::size_t> idx{2, 0, 1};
  static const std::vector<std::size_t> rows{1, 1, 0, 2};
  return {
      {"sigmoid", [](const std::vector<Tensor>& v) { return sigmoid(v[0]); }},
      {"log_softmax", [](const std::vector<Tensor>& v) { return log_softmax(v[0]); }},
      {"sub", [](const std::vector<Tensor>& v) { return sub(v[0], v[1]); }},
      {"matmul", [](const std::vector<Tensor>& v) { return matmul(v[0], reshape(v[1], {4, 3})); }},
      {"mean", [](const std::vector<Tensor>& v) { return mean(v[0]); }},
      {"pick", [](const std::vector<Tensor>& v) { return pick(v[0], idx); }},
      {"gather_rows", [](const std::vector<Tensor>& v) { return gather_rows(v[0], rows); }},
  };
}

/// Small synthetic dataset: 12x12 images, 6 base / 2 validation / 5 novel.
inline Dataset tiny_dataset(std::size_t per_class = 12, std::uint64_t seed = 3) {
  SyntheticConfig c;
  c.base_classes = 6;
  c.validation_classes = 2;
  c.novel_classes = 5;
  c.images_per_class = per_class;
  c.image_size = 12;
  c.seed = seed;
  return generate_synthetic(c, 3);
}

inline ModelConfig tiny_model(const Dataset& ds, std::string grid = "3") {
  ModelConfig m;
  m.geometry = ds.geometry();
  m.embed.widths = {4, 4};
  m.embed.feature_dim = 6;
  m.embed.aux_classes = ds.classes(Split::base).size();
  m.deform.branch_widths = {3, 3};
  m.grid = std::move(grid);
  return m;
}

inline TrainConfig tiny_train() {
  TrainConfig t;
  t.ways = 3;
  t.shots = 1;
  t.queries = 2;
  t.n_aug = 2;
  t.epsilon = 20.0;
  t.episodes_per_epoch = 2;
  t.stage1_epochs = 1;
  t.stage2_epochs = 1;
  t.stage3_epochs = 1;
  t.emb.batch_size = 8;
  t.gallery_per_class = 3;
  t.val_episodes = 0;
  return t;
}

inline EvalConfig tiny_eval() {
  EvalConfig e;
  e.ways = 3;
  e.shots = 1;
  e.queries = 2;
  e.episodes = 6;
  e.topk = {1, 2};
  e.n_aug = 2;
  e.epsilon = 20.0;
  return e;
}

}  // namespace testsupport

#include <benchmark/benchmark.h>

#include "patchmeta/deform.hpp"
#include "patchmeta/embed.hpp"
#include "patchmeta/model.hpp"
#include "patchmeta/ops.hpp"

using namespace patchmeta;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

ModelConfig reference_model() {
  ModelConfig m;
  m.geometry = {3, 36, 36};
  m.embed.widths = {16, 16, 16, 16};
  m.embed.feature_dim = 16;
  m.embed.aux_classes = 40;
  m.deform.branch_widths = {16, 16, 16, 16};
  return m;
}

Tensor images(std::size_t n, std::uint64_t seed) { return Tensor::from({n, 3, 36, 36}, noise(n * 3 * 36 * 36, seed)); }

void BM_Conv2dForward(benchmark::State& state) {
  const std::size_t c = static_cast<std::size_t>(state.range(0));
  const Tensor x = Tensor::from({8, c, 36, 36}, noise(8 * c * 36 * 36, 1));
  const Tensor w = Tensor::from({c, c, 3, 3}, noise(c * c * 9, 2));
  const Tensor b = Tensor::zeros({c});
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, b, 1));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2dForward)->Arg(3)->Arg(16)->Arg(32);

void BM_Conv2dForwardBackward(benchmark::State& state) {
  const std::size_t c = static_cast<std::size_t>(state.range(0));
  const Tensor x = Tensor::from({8, c, 36, 36}, noise(8 * c * 36 * 36, 1));
  const Tensor w = Tensor::leaf({c, c, 3, 3}, noise(c * c * 9, 2), kFreeGrad);
  const Tensor b = Tensor::leaf({c}, std::vector<double>(c, 0.0), kFreeGrad);
  for (auto _ : state) {
    backward(sum(conv2d(x, w, b, 1)), kFreeGrad);
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_Conv2dForwardBackward)->Arg(16);

void BM_EmbedBatch(benchmark::State& state) {
  const Model m = Model::create(reference_model(), 1);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Tensor x = images(n, 3);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(m.embed.embed(m.params, x));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_EmbedBatch)->Arg(1)->Arg(45)->Arg(400);

void BM_DeformationWeights(benchmark::State& state) {
  const Model m = Model::create(reference_model(), 1);
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Tensor p = images(n, 4), g = images(n, 5);
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(m.deform.weights(m.params, p, g));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_DeformationWeights)->Arg(40);

void BM_PatchBlend(benchmark::State& state) {
  const ImageGeometry geo{3, 36, 36};
  const PatchGrid grid = state.range(0) == 0 ? PatchGrid::pixels(geo) : PatchGrid::grid(state.range(0));
  const Tensor p = Tensor::from(geo.shape(), noise(3 * 36 * 36, 6));
  const Tensor g = Tensor::from(geo.shape(), noise(3 * 36 * 36, 7));
  const Tensor w = Tensor::from({grid.patches()}, noise(grid.patches(), 8));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(blend_patches(p, g, w, grid));
  state.SetLabel(grid.label());
}
BENCHMARK(BM_PatchBlend)->Arg(1)->Arg(3)->Arg(6)->Arg(0);

void BM_PrototypeProbabilities(benchmark::State& state) {
  const Tensor s = Tensor::from({45, 16}, noise(45 * 16, 9));
  std::vector<std::size_t> labels(45);
  for (std::size_t i = 0; i < 45; ++i) labels[i] = i % 5;
  const Tensor q = Tensor::from({75, 16}, noise(75 * 16, 10));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(prototype_probabilities(q, compute_prototypes(s, labels, 5)));
}
BENCHMARK(BM_PrototypeProbabilities);

}  // namespace

BENCHMARK_MAIN();

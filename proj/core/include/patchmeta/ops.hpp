#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "patchmeta/tensor.hpp"

namespace patchmeta {

// Differentiable operator set. Image batches are NCHW; feature batches are
// [rows x dims]. Every op validates shapes (ShapeError naming the op and the
// offending dims) and rejects non-finite results (NumericFault).

/// 2-D cross-correlation, stride 1, symmetric zero padding.
/// x [B,Ci,H,W], weight [Co,Ci,Kh,Kw], bias [Co].
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t padding);
/// x [B,In] * weight[Out,In]^T + bias[Out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// 2x2 window, stride 2, trailing odd row/column dropped.
Tensor max_pool2d(const Tensor& x);
/// [B,C,H,W] -> [B,C].
Tensor global_avg_pool(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// Softmax / log-softmax along the last axis (max-subtracted).
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
/// Pairwise squared Euclidean distances: a [N,D], b [K,D] -> [N,K].
Tensor sq_distances(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& x, Shape shape);
/// Per-patch blend out = w*probe + (1-w)*gallery on a rows x cols grid.
/// probe, gallery [B,C,H,W]; w [B, rows*cols] (row-major patch order). All
/// channels of a patch share one weight; H % rows == 0 and W % cols == 0.
Tensor patch_blend(const Tensor& probe, const Tensor& gallery, const Tensor& w,
                   std::size_t rows, std::size_t cols);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// out[i] = x[i, index[i]] for x [N,K].
Tensor pick(const Tensor& x, std::span<const std::size_t> index);
/// Rows of x (first axis) in the given order; backward scatter-adds.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

/// Generic dispatcher over the operator set (used by the gradient suite and
/// tools that build graphs from a description).
enum class OpKind {
  conv2d,
  linear,
  relu,
  max_pool,
  global_average_pool,
  concat,
  add,
  scalar_mul,
  elementwise_mul,
  softmax,
  log,
  exp,
  squared_euclidean_distance,
  reshape,
  patch_blend,
};

struct OpAttrs {
  std::size_t padding = 1;
  double scalar = 1.0;
  std::size_t axis = 0;
  Shape shape;
  std::size_t grid_rows = 1;
  std::size_t grid_cols = 1;
};

std::string_view op_name(OpKind kind);
std::vector<OpKind> all_op_kinds();
Tensor forward_op(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

}  // namespace patchmeta

#include "patchmeta/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "patchmeta/errors.hpp"

namespace patchmeta {

namespace {

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using AlignedMat = Eigen::Map<RowMat, Eigen::Aligned>;
using ConstAlignedMat = Eigen::Map<const RowMat, Eigen::Aligned>;
using AlignedVec = std::vector<double, Eigen::aligned_allocator<double>>;
using BackwardFn = std::function<void(Node&, GroupMask)>;

// Row-major operand of a product, optionally transposed.
struct Operand {
  const double* data;
  std::size_t rows, cols;
  bool transposed = false;
};

// dst (+)= op(a) * op(b), dst row-major. Eigen picks its SIMD peeling from
// operand addresses, so with wide vectors the same product could round
// differently depending on heap layout. Operands are staged in scratch with
// fixed alignment, which keeps every result bit-reproducible.
void gemm(double* dst, const Operand& a, const Operand& b, bool accumulate) {
  thread_local AlignedVec sa, sb, sc;
  sa.assign(a.data, a.data + a.rows * a.cols);
  sb.assign(b.data, b.data + b.rows * b.cols);
  const ConstAlignedMat A(sa.data(), static_cast<Eigen::Index>(a.rows), static_cast<Eigen::Index>(a.cols));
  const ConstAlignedMat B(sb.data(), static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols));
  const std::size_t r = a.transposed ? a.cols : a.rows, c = b.transposed ? b.rows : b.cols;
  sc.resize(r * c);
  AlignedMat C(sc.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  if (!a.transposed && !b.transposed) C.noalias() = A * B;
  else if (!a.transposed) C.noalias() = A * B.transpose();
  else if (!b.transposed) C.noalias() = A.transpose() * B;
  else C.noalias() = A.transpose() * B.transpose();
  if (accumulate) {
    for (std::size_t i = 0; i < sc.size(); ++i) dst[i] += sc[i];
  } else {
    std::copy(sc.begin(), sc.end(), dst);
  }
}

[[noreturn]] void shape_fail(const char* op, const std::string& msg) {
  throw ShapeError(std::string(op) + ": " + msg);
}

void require_ndim(const char* op, const char* name, const Tensor& t, std::size_t n) {
  if (!t.defined()) shape_fail(op, std::string(name) + " is undefined");
  if (t.ndim() != n) {
    std::ostringstream os;
    os << name << " must have " << n << " dims, got " << shape_str(t.shape());
    shape_fail(op, os.str());
  }
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_fail(op, "operand shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<const Tensor*> inputs, BackwardFn fn) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (GradMode::enabled()) {
    GroupMask track = 0;
    for (const auto* in : inputs) track |= in->track();
    if (track != 0) {
      node->track = track;
      node->leaf = false;
      for (const auto* in : inputs) node->inputs.push_back(in->node());
      node->backward_fn = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

// Gradient buffer of input i if it participates in this sweep, else null.
double* grad_of(Node& self, std::size_t i, GroupMask mask) {
  Node& in = *self.inputs[i];
  return in.wants(mask) ? in.ensure_grad().data() : nullptr;
}

template <typename F>
Tensor unary(const char* op, const Tensor& x, F&& f, BackwardFn fn) {
  std::vector<double> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result(op, x.shape(), std::move(out), {&x}, std::move(fn));
}

std::size_t last_dim_rows(const char* op, const Tensor& x, std::size_t& cols) {
  if (!x.defined() || x.ndim() == 0) shape_fail(op, "input must have at least one dim");
  cols = x.shape().back();
  return x.numel() / cols;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t padding) {
  constexpr const char* op = "conv2d";
  require_ndim(op, "input", x, 4);
  require_ndim(op, "weight", weight, 4);
  require_ndim(op, "bias", bias, 1);
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin) {
    shape_fail(op, "weight in-channels " + std::to_string(weight.dim(1)) + " != input channels " +
                       std::to_string(cin));
  }
  if (bias.dim(0) != cout) {
    shape_fail(op, "bias length " + std::to_string(bias.dim(0)) + " != out-channels " +
                       std::to_string(cout));
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    shape_fail(op, "kernel " + shape_str({kh, kw}) + " larger than padded input " +
                       shape_str({h + 2 * padding, w + 2 * padding}));
  }
  const std::size_t ho = h + 2 * padding - kh + 1, wo = w + 2 * padding - kw + 1;
  const std::size_t k = cin * kh * kw, p = ho * wo;
  const bool taped = GradMode::enabled() && (x.requires_grad() || weight.requires_grad() ||
                                             bias.requires_grad());

  std::vector<double> cols(k * p * (taped ? batch : 1));
  std::vector<double> out(batch * cout * p);
  auto xd = x.data();
  auto bd = bias.data();
  const auto pad = static_cast<std::ptrdiff_t>(padding);

  for (std::size_t b = 0; b < batch; ++b) {
    double* col = cols.data() + (taped ? b * k * p : 0);
    const double* img = xd.data() + b * cin * h * w;
    for (std::size_t c = 0; c < cin; ++c) {
      for (std::size_t ki = 0; ki < kh; ++ki) {
        for (std::size_t kj = 0; kj < kw; ++kj) {
          double* row = col + ((c * kh + ki) * kw + kj) * p;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ki) - pad;
            double* dst = row + oy * wo;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
              std::fill(dst, dst + wo, 0.0);
              continue;
            }
            const double* src = img + (c * h + static_cast<std::size_t>(iy)) * w;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kj) - pad;
              dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? 0.0 : src[ix];
            }
          }
        }
      }
    }
    double* y = out.data() + b * cout * p;
    gemm(y, {weight.data().data(), cout, k}, {col, k, p}, false);
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t j = 0; j < p; ++j) y[o * p + j] += bd[o];
  }

  if (!taped) cols.clear();
  BackwardFn fn = [cols = std::move(cols), batch, cin, h, w, cout, kh, kw, ho, wo, k, p, padding](
                      Node& self, GroupMask mask) {
    double* gx = grad_of(self, 0, mask);
    double* gw = grad_of(self, 1, mask);
    double* gb = grad_of(self, 2, mask);
    const double* wv = self.inputs[1]->value.data();
    std::vector<double> dcol(gx ? k * p : 0);
    const auto pad = static_cast<std::ptrdiff_t>(padding);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* g = self.grad.data() + b * cout * p;
      if (gw) gemm(gw, {g, cout, p}, {cols.data() + b * k * p, k, p, true}, true);
      if (gb) {
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t j = 0; j < p; ++j) gb[o] += g[o * p + j];
      }
      if (gx) {
        gemm(dcol.data(), {wv, cout, k, true}, {g, cout, p}, false);
        double* img = gx + b * cin * h * w;
        for (std::size_t c = 0; c < cin; ++c) {
          for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
              const double* row = dcol.data() + ((c * kh + ki) * kw + kj) * p;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ki) - pad;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                double* dst = img + (c * h + static_cast<std::size_t>(iy)) * w;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kj) - pad;
                  if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += row[oy * wo + ox];
                }
              }
            }
          }
        }
      }
    }
  };
  return make_result(op, {batch, cout, ho, wo}, std::move(out), {&x, &weight, &bias}, std::move(fn));
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  constexpr const char* op = "linear";
  require_ndim(op, "input", x, 2);
  require_ndim(op, "weight", weight, 2);
  require_ndim(op, "bias", bias, 1);
  const std::size_t n = x.dim(0), in = x.dim(1), outd = weight.dim(0);
  if (weight.dim(1) != in) {
    shape_fail(op, "weight " + shape_str(weight.shape()) + " incompatible with input " +
                       shape_str(x.shape()));
  }
  if (bias.dim(0) != outd) {
    shape_fail(op, "bias length " + std::to_string(bias.dim(0)) + " != " + std::to_string(outd));
  }
  std::vector<double> out(n * outd);
  gemm(out.data(), {x.data().data(), n, in}, {weight.data().data(), outd, in, true}, false);
  auto bd = bias.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < outd; ++o) out[r * outd + o] += bd[o];
  }
  BackwardFn fn = [n, in, outd](Node& self, GroupMask mask) {
    const double* g = self.grad.data();
    if (double* gx = grad_of(self, 0, mask)) {
      gemm(gx, {g, n, outd}, {self.inputs[1]->value.data(), outd, in}, true);
    }
    if (double* gw = grad_of(self, 1, mask)) {
      gemm(gw, {g, n, outd, true}, {self.inputs[0]->value.data(), n, in}, true);
    }
    if (double* gb = grad_of(self, 2, mask)) {
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < outd; ++o) gb[o] += g[r * outd + o];
    }
  };
  return make_result(op, {n, outd}, std::move(out), {&x, &weight, &bias}, std::move(fn));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  constexpr const char* op = "matmul";
  require_ndim(op, "lhs", a, 2);
  require_ndim(op, "rhs", b, 2);
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k) shape_fail(op, "inner dims differ: " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  std::vector<double> out(n * m);
  gemm(out.data(), {a.data().data(), n, k}, {b.data().data(), k, m}, false);
  BackwardFn fn = [n, k, m](Node& self, GroupMask mask) {
    const double* g = self.grad.data();
    if (double* ga = grad_of(self, 0, mask)) {
      gemm(ga, {g, n, m}, {self.inputs[1]->value.data(), k, m, true}, true);
    }
    if (double* gb = grad_of(self, 1, mask)) {
      gemm(gb, {self.inputs[0]->value.data(), n, k, true}, {g, n, m}, true);
    }
  };
  return make_result(op, {n, m}, std::move(out), {&a, &b}, std::move(fn));
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](Node& self, GroupMask mask) {
    if (double* gx = grad_of(self, 0, mask)) {
      const auto& xv = self.inputs[0]->value;
      for (std::size_t i = 0; i < xv.size(); ++i) {
        if (xv[i] > 0.0) gx[i] += self.grad[i];
      }
    }
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](Node& self, GroupMask mask) {
                 if (double* gx = grad_of(self, 0, mask)) {
                   for (std::size_t i = 0; i < self.value.size(); ++i) {
                     const double s = self.value[i];
                     gx[i] += self.grad[i] * s * (1.0 - s);
                   }
                 }
               });
}

Tensor max_pool2d(const Tensor& x) {
  constexpr const char* op = "max-pool";
  require_ndim(op, "input", x, 4);
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) shape_fail(op, "input " + shape_str(x.shape()) + " smaller than 2x2 window");
  std::vector<double> out(planes * ho * wo);
  std::vector<std::size_t> argmax(out.size());
  auto xd = x.data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = xd.data() + pl * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const std::size_t o = (pl * ho + oy) * wo + ox;
        out[o] = src[best];
        argmax[o] = pl * h * w + best;
      }
    }
  }
  BackwardFn fn = [argmax = std::move(argmax)](Node& self, GroupMask mask) {
    if (double* gx = grad_of(self, 0, mask)) {
      for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[o];
    }
  };
  return make_result(op, {x.dim(0), x.dim(1), ho, wo}, std::move(out), {&x}, std::move(fn));
}

Tensor global_avg_pool(const Tensor& x) {
  constexpr const char* op = "global-average-pool";
  require_ndim(op, "input", x, 4);
  const std::size_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  std::vector<double> out(planes);
  auto xd = x.data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    double s = 0.0;
    for (std::size_t i = 0; i < area; ++i) s += xd[pl * area + i];
    out[pl] = s / static_cast<double>(area);
  }
  BackwardFn fn = [planes, area](Node& self, GroupMask mask) {
    if (double* gx = grad_of(self, 0, mask)) {
      for (std::size_t pl = 0; pl < planes; ++pl) {
        const double g = self.grad[pl] / static_cast<double>(area);
        for (std::size_t i = 0; i < area; ++i) gx[pl * area + i] += g;
      }
    }
  };
  return make_result(op, {x.dim(0), x.dim(1)}, std::move(out), {&x}, std::move(fn));
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  constexpr const char* op = "concat";
  if (parts.empty()) shape_fail(op, "no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) shape_fail(op, "axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) shape_fail(op, "part " + shape_str(s) + " incompatible with " + shape_str(first) + " along axis " + std::to_string(axis));
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_row = out_shape[axis] * inner;

  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& t : parts) {
    const std::size_t width = t.dim(axis) * inner;
    auto td = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(td.data() + o * width, width, out.data() + o * out_row + offset);
    }
    widths.push_back(width);
    offset += width;
  }
  std::vector<const Tensor*> inputs;
  for (const auto& t : parts) inputs.push_back(&t);
  BackwardFn fn = [widths, outer, out_row](Node& self, GroupMask mask) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (double* g = grad_of(self, i, mask)) {
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = self.grad.data() + o * out_row + off;
          double* dst = g + o * widths[i];
          for (std::size_t j = 0; j < widths[i]; ++j) dst[j] += src[j];
        }
      }
      off += widths[i];
    }
  };
  return make_result(op, std::move(out_shape), std::move(out), std::move(inputs), std::move(fn));
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result("add", a.shape(), std::move(out), {&a, &b}, [](Node& self, GroupMask mask) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = grad_of(self, k, mask)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self, GroupMask mask) {
    if (double* g = grad_of(self, 0, mask)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1, mask)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("elementwise-mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result("elementwise-mul", a.shape(), std::move(out), {&a, &b}, [](Node& self, GroupMask mask) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (double* g = grad_of(self, 0, mask)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = grad_of(self, 1, mask)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary("scalar-mul", x, [factor](double v) { return v * factor; },
               [factor](Node& self, GroupMask mask) {
                 if (double* g = grad_of(self, 0, mask)) {
                   for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
                 }
               });
}

Tensor softmax(const Tensor& x) {
  std::size_t cols = 0;
  const std::size_t rows = last_dim_rows("softmax", x, cols);
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xd.data() + r * cols;
    double* dst = out.data() + r * cols;
    const double mx = *std::max_element(src, src + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += (dst[c] = std::exp(src[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) dst[c] /= z;
  }
  return make_result("softmax", x.shape(), std::move(out), {&x}, [rows, cols](Node& self, GroupMask mask) {
    if (double* g = grad_of(self, 0, mask)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.value.data() + r * cols;
        const double* gy = self.grad.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += y[c] * gy[c];
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += y[c] * (gy[c] - dot);
      }
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  std::size_t cols = 0;
  const std::size_t rows = last_dim_rows("log-softmax", x, cols);
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = xd.data() + r * cols;
    const double mx = *std::max_element(src, src + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(src[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = src[c] - lse;
  }
  return make_result("log-softmax", x.shape(), std::move(out), {&x}, [rows, cols](Node& self, GroupMask mask) {
    if (double* g = grad_of(self, 0, mask)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.value.data() + r * cols;
        const double* gy = self.grad.data() + r * cols;
        double gsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gsum += gy[c];
        for (std::size_t c = 0; c < cols; ++c) g[r * cols + c] += gy[c] - std::exp(y[c]) * gsum;
      }
    }
  });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](Node& self, GroupMask mask) {
    if (double* g = grad_of(self, 0, mask)) {
      const auto& xv = self.inputs[0]->value;
      for (std::size_t i = 0; i < xv.size(); ++i) g[i] += self.grad[i] / xv[i];
    }
  });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](Node& self, GroupMask mask) {
    if (double* g = grad_of(self, 0, mask)) {
      for (std::size_t i = 0; i < self.value.size(); ++i) g[i] += self.grad[i] * self.value[i];
    }
  });
}

Tensor sq_distances(const Tensor& a, const Tensor& b) {
  constexpr const char* op = "squared-euclidean-distance";
  require_ndim(op, "lhs", a, 2);
  require_ndim(op, "rhs", b, 2);
  const std::size_t n = a.dim(0), k = b.dim(0), d = a.dim(1);
  if (b.dim(1) != d) {
    shape_fail(op, "feature dims differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(n * k);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = ad[i * d + t] - bd[j * d + t];
        s += diff * diff;
      }
      out[i * k + j] = s;
    }
  }
  return make_result(op, {n, k}, std::move(out), {&a, &b}, [n, k, d](Node& self, GroupMask mask) {
    double* ga = grad_of(self, 0, mask);
    double* gb = grad_of(self, 1, mask);
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double g2 = 2.0 * self.grad[i * k + j];
        for (std::size_t t = 0; t < d; ++t) {
          const double diff = av[i * d + t] - bv[j * d + t];
          if (ga) ga[i * d + t] += g2 * diff;
          if (gb) gb[j * d + t] -= g2 * diff;
        }
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    shape_fail("reshape", "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {&x}, [](Node& self, GroupMask mask) {
    if (double* g = grad_of(self, 0, mask)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor patch_blend(const Tensor& probe, const Tensor& gallery, const Tensor& w, std::size_t rows,
                   std::size_t cols) {
  constexpr const char* op = "patch-blend";
  require_ndim(op, "probe", probe, 4);
  require_same(op, probe, gallery);
  require_ndim(op, "weights", w, 2);
  const std::size_t batch = probe.dim(0), ch = probe.dim(1), h = probe.dim(2), wd = probe.dim(3);
  if (rows == 0 || cols == 0 || h % rows != 0 || wd % cols != 0) {
    shape_fail(op, "image " + shape_str({h, wd}) + " not divisible by grid " + shape_str({rows, cols}));
  }
  if (w.dim(0) != batch || w.dim(1) != rows * cols) {
    shape_fail(op, "weights " + shape_str(w.shape()) + " do not match batch " + std::to_string(batch) +
                       " x " + std::to_string(rows * cols) + " patches");
  }
  const std::size_t ph = h / rows, pw = wd / cols, plane = h * wd;
  auto pd = probe.data();
  auto gd = gallery.data();
  auto wv = w.data();
  std::vector<double> out(probe.numel());
  auto patch_of = [=](std::size_t y, std::size_t x) { return (y / ph) * cols + x / pw; };
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (b * ch + c) * plane;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < wd; ++x) {
          const double wq = wv[b * rows * cols + patch_of(y, x)];
          const std::size_t i = base + y * wd + x;
          // Equal pixels are kept exactly (w*p + (1-w)*p can round).
          out[i] = pd[i] == gd[i] ? pd[i] : wq * pd[i] + (1.0 - wq) * gd[i];
        }
      }
    }
  }
  BackwardFn fn = [=](Node& self, GroupMask mask) {
    double* gp = grad_of(self, 0, mask);
    double* gg = grad_of(self, 1, mask);
    double* gw = grad_of(self, 2, mask);
    const auto& pv = self.inputs[0]->value;
    const auto& gv = self.inputs[1]->value;
    const auto& wvals = self.inputs[2]->value;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t base = (b * ch + c) * plane;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < wd; ++x) {
            const std::size_t q = b * rows * cols + patch_of(y, x);
            const std::size_t i = base + y * wd + x;
            const double g = self.grad[i];
            if (gp) gp[i] += g * wvals[q];
            if (gg) gg[i] += g * (1.0 - wvals[q]);
            if (gw) gw[q] += g * (pv[i] - gv[i]);
          }
        }
      }
    }
  };
  return make_result(op, probe.shape(), std::move(out), {&probe, &gallery, &w}, std::move(fn));
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("sum", {1}, {s}, {&x}, [](Node& self, GroupMask mask) {
    if (double* g = grad_of(self, 0, mask)) {
      const std::size_t n = self.inputs[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.data()) s += v;
  return make_result("mean", {1}, {s / n}, {&x}, [n](Node& self, GroupMask mask) {
    if (double* g = grad_of(self, 0, mask)) {
      const std::size_t cnt = self.inputs[0]->value.size();
      for (std::size_t i = 0; i < cnt; ++i) g[i] += self.grad[0] / n;
    }
  });
}

Tensor pick(const Tensor& x, std::span<const std::size_t> index) {
  constexpr const char* op = "pick";
  require_ndim(op, "input", x, 2);
  const std::size_t n = x.dim(0), k = x.dim(1);
  if (index.size() != n) shape_fail(op, "index length " + std::to_string(index.size()) + " != rows " + std::to_string(n));
  std::vector<double> out(n);
  std::vector<std::size_t> flat(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] >= k) shape_fail(op, "index " + std::to_string(index[i]) + " >= " + std::to_string(k) + " columns");
    flat[i] = i * k + index[i];
    out[i] = x[flat[i]];
  }
  return make_result(op, {n}, std::move(out), {&x}, [flat = std::move(flat)](Node& self, GroupMask mask) {
    if (double* g = grad_of(self, 0, mask)) {
      for (std::size_t i = 0; i < flat.size(); ++i) g[flat[i]] += self.grad[i];
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  constexpr const char* op = "gather-rows";
  if (!x.defined() || x.ndim() == 0) shape_fail(op, "input must have at least one dim");
  if (rows.empty()) shape_fail(op, "empty row list");
  const std::size_t n = x.dim(0), stride = x.numel() / n;
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  std::vector<double> out(rows.size() * stride);
  auto xd = x.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) shape_fail(op, "row " + std::to_string(rows[r]) + " >= " + std::to_string(n));
    std::copy_n(xd.data() + rows[r] * stride, stride, out.data() + r * stride);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return make_result(op, std::move(out_shape), std::move(out), {&x},
                     [idx = std::move(idx), stride](Node& self, GroupMask mask) {
                       if (double* g = grad_of(self, 0, mask)) {
                         for (std::size_t r = 0; r < idx.size(); ++r) {
                           for (std::size_t j = 0; j < stride; ++j) g[idx[r] * stride + j] += self.grad[r * stride + j];
                         }
                       }
                     });
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::conv2d: return "conv2d";
    case OpKind::linear: return "linear";
    case OpKind::relu: return "relu";
    case OpKind::max_pool: return "max-pool";
    case OpKind::global_average_pool: return "global-average-pool";
    case OpKind::concat: return "concat";
    case OpKind::add: return "add";
    case OpKind::scalar_mul: return "scalar-mul";
    case OpKind::elementwise_mul: return "elementwise-mul";
    case OpKind::softmax: return "softmax";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::squared_euclidean_distance: return "squared-euclidean-distance";
    case OpKind::reshape: return "reshape";
    case OpKind::patch_blend: return "patch-blend";
  }
  return "unknown";
}

std::vector<OpKind> all_op_kinds() {
  return {OpKind::conv2d,  OpKind::linear,     OpKind::relu,
          OpKind::max_pool, OpKind::global_average_pool, OpKind::concat,
          OpKind::add,     OpKind::scalar_mul, OpKind::elementwise_mul,
          OpKind::softmax, OpKind::log,        OpKind::exp,
          OpKind::squared_euclidean_distance,  OpKind::reshape,
          OpKind::patch_blend};
}

Tensor forward_op(OpKind kind, std::span<const Tensor> in, const OpAttrs& attrs) {
  auto arity = [&](std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(std::string(op_name(kind)) + ": expects " + std::to_string(n) + " inputs, got " +
                       std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::conv2d: arity(3); return conv2d(in[0], in[1], in[2], attrs.padding);
    case OpKind::linear: arity(3); return linear(in[0], in[1], in[2]);
    case OpKind::relu: arity(1); return relu(in[0]);
    case OpKind::max_pool: arity(1); return max_pool2d(in[0]);
    case OpKind::global_average_pool: arity(1); return global_avg_pool(in[0]);
    case OpKind::concat: return concat(in, attrs.axis);
    case OpKind::add: arity(2); return add(in[0], in[1]);
    case OpKind::scalar_mul: arity(1); return scale(in[0], attrs.scalar);
    case OpKind::elementwise_mul: arity(2); return mul(in[0], in[1]);
    case OpKind::softmax: arity(1); return softmax(in[0]);
    case OpKind::log: arity(1); return log(in[0]);
    case OpKind::exp: arity(1); return exp(in[0]);
    case OpKind::squared_euclidean_distance: arity(2); return sq_distances(in[0], in[1]);
    case OpKind::reshape: arity(1); return reshape(in[0], attrs.shape);
    case OpKind::patch_blend: arity(3); return patch_blend(in[0], in[1], in[2], attrs.grid_rows, attrs.grid_cols);
  }
  throw UsageError("forward_op: unknown op kind");
}

}  // namespace patchmeta

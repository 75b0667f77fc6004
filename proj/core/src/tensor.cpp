#include "patchmeta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "patchmeta/errors.hpp"

namespace patchmeta {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check_finite(std::span<const double> values, const char* op) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      std::ostringstream os;
      os << op << ": non-finite value " << values[i] << " at flat index " << i;
      throw NumericFault(os.str());
    }
  }
}

namespace detail {

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
  }
  if (numel(shape) != values.size()) {
    std::ostringstream os;
    os << "tensor: shape " << shape_str(shape) << " needs " << numel(shape) << " values, got "
       << values.size();
    throw ShapeError(os.str());
  }
  check_finite(values, "tensor");
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return n;
}

}  // namespace

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> v(patchmeta::numel(shape), value);
  return Tensor(make_node(std::move(shape), std::move(v)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(make_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::leaf(Shape shape, std::vector<double> values, GroupMask track) {
  auto n = make_node(std::move(shape), std::move(values));
  n->track = track;
  return Tensor(std::move(n));
}

const Shape& Tensor::shape() const {
  if (!node_) throw UsageError("tensor: access to undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return patchmeta::numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!node_) throw UsageError("tensor: access to undefined tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw UsageError("tensor: access to undefined tensor");
  if (!node_->leaf) throw UsageError("tensor: only leaves may be mutated");
  return node_->value;
}

std::span<const double> Tensor::grad() const {
  if (!node_) throw UsageError("tensor: access to undefined tensor");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_) throw UsageError("tensor: access to undefined tensor");
  return node_->ensure_grad();
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->track != 0; }
GroupMask Tensor::track() const { return node_ ? node_->track : GroupMask{0}; }
const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::detach() const { return from(shape(), node_->value); }

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss, GroupMask mask) {
  if (!loss.defined()) throw UsageError("backward: undefined loss");
  if (loss.numel() != 1) {
    throw UsageError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  auto* root = loss.node().get();
  if (!root->wants(mask)) {
    throw UsageError("backward: loss is not connected to any tracked tensor in the requested groups");
  }

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* in = node->inputs[next++].get();
      if (in->wants(mask) && seen.insert(in).second) stack.emplace_back(in, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->leaf && n->backward_fn) n->backward_fn(*n, mask);
  }
  for (auto* n : order) {
    if (!n->leaf) std::vector<double>().swap(n->grad);
  }
}

}  // namespace patchmeta

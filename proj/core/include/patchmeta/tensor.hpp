#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace patchmeta {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Bitmask of gradient "groups" a tensor depends on. Parameters carry the
/// bit of the group they belong to; `kFreeGrad` marks ad-hoc leaves (test
/// inputs, images whose gradient is inspected directly).
using GroupMask = std::uint8_t;
inline constexpr GroupMask kEmbGroup = 1;
inline constexpr GroupMask kDefGroup = 2;
inline constexpr GroupMask kFreeGrad = 4;
inline constexpr GroupMask kAllGroups = kEmbGroup | kDefGroup | kFreeGrad;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  GroupMask track = 0;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Propagates this node's grad into those inputs whose track intersects mask.
  std::function<void(Node&, GroupMask)> backward_fn;

  bool wants(GroupMask mask) const { return (track & mask) != 0; }
  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense row-major double tensor with an optional reverse-mode tape.
///
/// Values are immutable once an op has produced them; only leaves owned by
/// a ParameterSet are updated in place (through `mutable_data`).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  /// Leaf that records gradients for the groups in `track`.
  static Tensor leaf(Shape shape, std::vector<double> values, GroupMask track);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  /// Accumulated gradient; empty when none has been recorded.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  GroupMask track() const;
  const char* op_name() const;

  /// Untracked copy of the values.
  Tensor detach() const;

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Thread-local switch; while disabled, ops never attach results to the tape.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse sweep from a scalar loss. Only nodes whose track intersects
/// `mask` are visited, so gradients never reach leaves outside the mask.
/// Interior gradients are reset on every call; leaf gradients accumulate.
void backward(const Tensor& loss, GroupMask mask = kAllGroups);

/// Throws NumericFault naming `op` if any value is NaN or Inf.
void check_finite(std::span<const double> values, const char* op);

}  // namespace patchmeta

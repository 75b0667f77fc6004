#pragma once

#include <string>
#include <vector>

#include "patchmeta/params.hpp"

namespace patchmeta {

/// conv3x3 -> relu -> max-pool blocks followed by global average pooling.
/// Holds only the architecture; weights live in a ParameterSet under
/// `<prefix>.conv<i>.{weight,bias}`.
class ConvNet {
 public:
  ConvNet() = default;
  ConvNet(std::string prefix, ParamGroup group, std::size_t in_channels, std::vector<std::size_t> widths);

  void init(ParameterSet& params, Rng& rng) const;
  /// [B,C,H,W] -> [B, out_dim()].
  Tensor forward(const ParameterSet& params, const Tensor& batch) const;

  std::size_t out_dim() const { return widths_.empty() ? in_channels_ : widths_.back(); }
  std::size_t blocks() const { return widths_.size(); }
  const std::string& prefix() const { return prefix_; }
  /// Smallest input side that survives every pooling stage.
  std::size_t min_input_side() const { return std::size_t{1} << widths_.size(); }

 private:
  std::string prefix_;
  ParamGroup group_ = ParamGroup::emb;
  std::size_t in_channels_ = 3;
  std::vector<std::size_t> widths_;
};

}  // namespace patchmeta

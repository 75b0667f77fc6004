#include "patchmeta/convnet.hpp"

#include <cmath>

#include "patchmeta/errors.hpp"
#include "patchmeta/ops.hpp"

namespace patchmeta {

ConvNet::ConvNet(std::string prefix, ParamGroup group, std::size_t in_channels, std::vector<std::size_t> widths)
    : prefix_(std::move(prefix)), group_(group), in_channels_(in_channels), widths_(std::move(widths)) {
  if (widths_.empty()) throw ConfigError(prefix_ + ": at least one conv block required");
  for (auto w : widths_) {
    if (w == 0) throw ConfigError(prefix_ + ": channel widths must be positive");
  }
}

void ConvNet::init(ParameterSet& params, Rng& rng) const {
  std::size_t cin = in_channels_;
  for (std::size_t i = 0; i < widths_.size(); ++i) {
    const std::string base = prefix_ + ".conv" + std::to_string(i);
    const std::size_t fan_in = cin * 9;
    params.add_uniform(base + ".weight", group_, {widths_[i], cin, 3, 3}, fan_in, rng, std::sqrt(6.0));
    params.add_uniform(base + ".bias", group_, {widths_[i]}, fan_in, rng);
    cin = widths_[i];
  }
}

Tensor ConvNet::forward(const ParameterSet& params, const Tensor& batch) const {
  Tensor x = batch;
  for (std::size_t i = 0; i < widths_.size(); ++i) {
    const std::string base = prefix_ + ".conv" + std::to_string(i);
    x = max_pool2d(relu(conv2d(x, params.get(base + ".weight"), params.get(base + ".bias"), 1)));
  }
  return global_avg_pool(x);
}

}  // namespace patchmeta

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "patchmeta/rng.hpp"
#include "patchmeta/tensor.hpp"

namespace patchmeta {

/// The two trainable groups: embedding sub-network (+ auxiliary softmax head)
/// and deformation sub-network (both branches + weight head).
enum class ParamGroup : std::uint8_t { emb = kEmbGroup, def = kDefGroup };

const char* group_name(ParamGroup g);
ParamGroup parse_group(const std::string& name);
constexpr GroupMask mask_of(ParamGroup g) { return static_cast<GroupMask>(g); }

struct SgdConfig;

/// Named parameters, each in exactly one group. Insertion order is stable and
/// defines checkpoint layout.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;
  // Tensors are shared handles; copies must be explicit (clone()).
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Tensor& add(const std::string& name, ParamGroup group, Shape shape, std::vector<double> values);
  /// Uniform in +/- gain * sqrt(1/fan_in).
  Tensor& add_uniform(const std::string& name, ParamGroup group, Shape shape, std::size_t fan_in, Rng& rng,
                      double gain = 1.0);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  ParamGroup group_of(const std::string& name) const;
  std::vector<std::string> names() const;
  std::vector<std::string> names(ParamGroup group) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count(ParamGroup group) const;

  /// Reverse sweep restricted to `mask`; every parameter of a masked group is
  /// left with a (possibly all-zero) gradient and marked ready for a step.
  void backward(const Tensor& loss, GroupMask mask);
  bool has_grad(ParamGroup group) const;
  void zero_grad(ParamGroup group);
  void zero_grad();

  /// Content hash over names, groups, shapes and raw value bits.
  std::uint64_t hash() const;
  std::uint64_t hash(ParamGroup group) const;

  /// Copy of all values, untracked bookkeeping reset.
  ParameterSet clone() const;

 private:
  friend void sgd_step(ParameterSet&, ParamGroup, const SgdConfig&, int);
  struct Entry {
    std::string name;
    ParamGroup group;
    Tensor tensor;
    bool grad_ready = false;
  };
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

struct SgdConfig {
  double lr = 0.1;
  double decay = 0.1;
  int decay_interval = 30;
  int batch_size = 32;

  void validate(const std::string& label) const;
  /// lr * decay^floor(epoch / decay_interval).
  double rate(int epoch) const;
};

/// p <- p - rate(epoch) * grad for the named group only; zeroes that group's
/// gradients afterwards. Throws UsageError if no gradient is ready.
void sgd_step(ParameterSet& params, ParamGroup group, const SgdConfig& cfg, int epoch);

/// Versioned binary checkpoint: parameters plus free-form string metadata.
struct Checkpoint {
  ParameterSet params;
  std::map<std::string, std::string> metadata;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::byte> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::byte> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace patchmeta

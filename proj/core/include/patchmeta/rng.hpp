#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace patchmeta {

using Rng = std::mt19937_64;

/// Independent stream `stream` of master seed `seed`. All randomness in the
/// library is drawn from generators built here.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

/// FNV-1a 64-bit, used for content hashes of datasets, galleries, checkpoints.
class Fnv1a {
 public:
  void update(std::span<const std::byte> bytes);
  void update(std::string_view text);
  template <typename T>
  void update_value(const T& v) {
    update(std::as_bytes(std::span<const T>(&v, 1)));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::uint64_t fnv1a(std::span<const std::byte> bytes);

}  // namespace patchmeta

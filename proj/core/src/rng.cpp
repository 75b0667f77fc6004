#include "patchmeta/rng.hpp"

namespace patchmeta {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x9e3779b9U};
  return Rng(seq);
}

void Fnv1a::update(std::span<const std::byte> bytes) {
  for (std::byte b : bytes) {
    state_ ^= static_cast<std::uint64_t>(b);
    state_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update(std::string_view text) { update(std::as_bytes(std::span(text.data(), text.size()))); }

std::uint64_t fnv1a(std::span<const std::byte> bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.digest();
}

}  // namespace patchmeta

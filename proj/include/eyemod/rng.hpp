#pragma once

#include <cstdint>
#include <random>

namespace eyemod {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Counter-based seed for one dataset frame. Injective over
/// class_index < 2^16, snr_index < 2^16, frame_index < 2^32 for a fixed
/// global seed; throws InvalidArgument outside those bounds.
std::uint64_t frame_seed(std::uint64_t global_seed, std::uint32_t class_index,
                         std::uint32_t snr_index, std::uint64_t frame_index);

/// Independent sub-stream of a seed (modulation, fading, noise, ...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(seed ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

}  // namespace eyemod

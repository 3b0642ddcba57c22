#include "eyemod/rng.hpp"

#include "eyemod/error.hpp"

namespace eyemod {

std::uint64_t frame_seed(std::uint64_t global_seed, std::uint32_t class_index,
                         std::uint32_t snr_index, std::uint64_t frame_index) {
  if (class_index >= (1u << 16) || snr_index >= (1u << 16) || frame_index >= (1ULL << 32)) {
    throw Error(ErrorCode::InvalidArgument, "frame_seed index out of bounds");
  }
  const std::uint64_t packed = (static_cast<std::uint64_t>(class_index) << 48) |
                               (static_cast<std::uint64_t>(snr_index) << 32) | frame_index;
  // mix64 is bijective, so for a fixed global seed distinct packed words map
  // to distinct seeds.
  return mix64(mix64(packed) ^ mix64(global_seed));
}

}  // namespace eyemod

#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "eyemod/synth.hpp"

namespace eyemod {

/// Little-endian frame file: magic "EYEFRM1\n", header, then interleaved
/// f32 I/Q pairs.
void write_frame_file(const ComplexFrame& frame, const std::filesystem::path& path);
ComplexFrame read_frame_file(const std::filesystem::path& path);

namespace cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDiverged = 3;

/// Runs one subcommand (synth, dataset, train, eval). args excludes the
/// program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cli
}  // namespace eyemod

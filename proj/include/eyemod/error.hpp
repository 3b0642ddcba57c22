#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace eyemod {

enum class ErrorCode {
  InvalidArgument,
  NotDigital,
  NotLinear,
  DelayTooLarge,
  ZeroPower,
  BadTraceLength,
  EmptyImage,
  BadPixel,
  CellTooSmall,
  NotADataset,
  Corrupt,
  UnsupportedVersion,
  EmptySplit,
  ShapeError,
  Diverged,
  BadLabel,
  EmptyMatrix,
  Io,
};

std::string_view error_code_name(ErrorCode code) noexcept;

/// Every recoverable failure in the library is reported as an Error carrying
/// one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace eyemod

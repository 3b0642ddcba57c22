#include "eyemod/error.hpp"

namespace eyemod {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NotDigital: return "NotDigital";
    case ErrorCode::NotLinear: return "NotLinear";
    case ErrorCode::DelayTooLarge: return "DelayTooLarge";
    case ErrorCode::ZeroPower: return "ZeroPower";
    case ErrorCode::BadTraceLength: return "BadTraceLength";
    case ErrorCode::EmptyImage: return "EmptyImage";
    case ErrorCode::BadPixel: return "BadPixel";
    case ErrorCode::CellTooSmall: return "CellTooSmall";
    case ErrorCode::NotADataset: return "NotADataset";
    case ErrorCode::Corrupt: return "Corrupt";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::Diverged: return "DivergedError";
    case ErrorCode::BadLabel: return "BadLabel";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::Io: return "IoError";
  }
  return "Unknown";
}

}  // namespace eyemod

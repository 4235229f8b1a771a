#include "saspec/error.hpp"

namespace saspec {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kZeroMatrix: return "ZeroMatrix";
    case ErrorCode::kTooLarge: return "TooLarge";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kZeroInput: return "ZeroInput";
    case ErrorCode::kEmptyBatch: return "EmptyBatch";
    case ErrorCode::kEmptySeries: return "EmptySeries";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kBadDims: return "BadDims";
    case ErrorCode::kBadTarget: return "BadTarget";
    case ErrorCode::kTraceMismatch: return "TraceMismatch";
    case ErrorCode::kEmptyTraces: return "EmptyTraces";
    case ErrorCode::kBadInput: return "BadInput";
    case ErrorCode::kRegionNotReached: return "RegionNotReached";
    case ErrorCode::kDegenerateSpectrum: return "DegenerateSpectrum";
    case ErrorCode::kPathologyLost: return "PathologyLost";
    case ErrorCode::kNonFinite: return "NonFinite";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kNameTooLong: return "NameTooLong";
    case ErrorCode::kDuplicateName: return "DuplicateName";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kBadVersion: return "BadVersion";
    case ErrorCode::kCrcMismatch: return "CrcMismatch";
    case ErrorCode::kTruncated: return "Truncated";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kOrderViolation: return "OrderViolation";
  }
  return "Unknown";
}

}  // namespace saspec

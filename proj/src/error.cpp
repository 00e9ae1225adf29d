#include "dmreuse/error.hpp"

namespace dmreuse {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::RangeError: return "RangeError";
    case ErrorCode::KMismatch: return "KMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::EmptyStore: return "EmptyStore";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::HashMismatch: return "HashMismatch";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::UpdateInProgress: return "UpdateInProgress";
    case ErrorCode::NotInitialized: return "NotInitialized";
    case ErrorCode::PayloadTooLarge: return "PayloadTooLarge";
  }
  return "Unknown";
}

}  // namespace dmreuse

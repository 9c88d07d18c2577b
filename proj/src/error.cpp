#include "stsmon/error.hpp"

namespace stsmon {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::OutOfInteriorBounds: return "OutOfInteriorBounds";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InsufficientTail: return "InsufficientTail";
    case ErrorCode::DegenerateTail: return "DegenerateTail";
    case ErrorCode::WindowTooLarge: return "WindowTooLarge";
    case ErrorCode::EmptyValidRegion: return "EmptyValidRegion";
    case ErrorCode::InsufficientPhaseI: return "InsufficientPhaseI";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::PlacementOutOfBounds: return "PlacementOutOfBounds";
    case ErrorCode::ConstantField: return "ConstantField";
  }
  return "Unknown";
}

}  // namespace stsmon

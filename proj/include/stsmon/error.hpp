#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stsmon {

enum class ErrorCode {
  InvalidArgument,
  IoError,
  FormatError,
  ZeroVariance,
  OutOfInteriorBounds,
  ImageTooSmall,
  DimensionMismatch,
  InsufficientData,
  InsufficientTail,
  DegenerateTail,
  WindowTooLarge,
  EmptyValidRegion,
  InsufficientPhaseI,
  ConfigMismatch,
  PlacementOutOfBounds,
  ConstantField,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace stsmon

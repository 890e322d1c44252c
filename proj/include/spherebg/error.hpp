#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace spherebg {

enum class ErrorCode {
  CameraOutsideSphere,
  ZeroVector,
  InvalidRange,
  InvalidArgument,
  OutOfBounds,
  OutOfRange,
  NonFiniteInput,
  NonFinite,
  NonFiniteGradient,
  ShapeMismatch,
  NonScalarOutput,
  DegenerateScene,
  Diverged,
  IoFailure,
  ParseError,
  InvariantViolation,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::CameraOutsideSphere: return "CameraOutsideSphere";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonScalarOutput: return "NonScalarOutput";
    case ErrorCode::DegenerateScene: return "DegenerateScene";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace spherebg

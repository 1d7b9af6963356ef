#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hgpose {

enum class ErrorCode {
  // geometry
  ZeroNorm,
  NotARotation,
  NotUnit,
  MalformedMatrix,
  // model
  InvalidConfig,
  ShapeMismatch,
  UninitializedModel,
  IO,
  CorruptCheckpoint,
  // loss
  ZeroNormPrediction,
  NonUnitTarget,
  EmptyBatch,
  // data
  LayoutError,
  PoseParseError,
  EmptySet,
  ZeroVariance,
  TooSmall,
  // training
  OutOfRange,
  NonFiniteLoss,
  // evaluation
  EmptyInput,
  UnsortedEdges,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroNorm: return "ZeroNorm";
    case ErrorCode::NotARotation: return "NotARotation";
    case ErrorCode::NotUnit: return "NotUnit";
    case ErrorCode::MalformedMatrix: return "MalformedMatrix";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UninitializedModel: return "UninitializedModel";
    case ErrorCode::IO: return "IO";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::ZeroNormPrediction: return "ZeroNormPrediction";
    case ErrorCode::NonUnitTarget: return "NonUnitTarget";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::LayoutError: return "LayoutError";
    case ErrorCode::PoseParseError: return "PoseParseError";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnsortedEdges: return "UnsortedEdges";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (notably the CLI) can map it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace hgpose

#pragma once

#include <stdexcept>
#include <string>

namespace dgform {

enum class ErrorCode {
  kInvalidShape,
  kInvalidConfig,
  kInvalidInput,
  kDegenerateFormation,
  kInvalidPrimitive,
  kNoPathFound,
  kInvalidDurations,
  kOutOfRange,
  kNonFiniteCost,
  kInfeasibleGuidance,
  kNoAssignment,
  kInvalidState,
  kIo,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidShape: return "invalid-shape";
    case ErrorCode::kInvalidConfig: return "invalid-config";
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kDegenerateFormation: return "degenerate-formation";
    case ErrorCode::kInvalidPrimitive: return "invalid-primitive";
    case ErrorCode::kNoPathFound: return "no-path-found";
    case ErrorCode::kInvalidDurations: return "invalid-durations";
    case ErrorCode::kOutOfRange: return "out-of-range";
    case ErrorCode::kNonFiniteCost: return "non-finite-cost";
    case ErrorCode::kInfeasibleGuidance: return "infeasible-guidance";
    case ErrorCode::kNoAssignment: return "no-assignment";
    case ErrorCode::kInvalidState: return "invalid-state";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace dgform

#pragma once

#include <stdexcept>
#include <string>

namespace mtlrelu {

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  parse_error,
  schema_error,
  duplicate_input,
  too_few_points,
  not_interpolating,
  singular_system,
  not_converged,
  diverged,
  undefined_objective,
  empty_active_set,
  io_error,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::schema_error: return "schema_error";
    case ErrorCode::duplicate_input: return "duplicate_input";
    case ErrorCode::too_few_points: return "too_few_points";
    case ErrorCode::not_interpolating: return "not_interpolating";
    case ErrorCode::singular_system: return "singular_system";
    case ErrorCode::not_converged: return "not_converged";
    case ErrorCode::diverged: return "diverged";
    case ErrorCode::undefined_objective: return "undefined_objective";
    case ErrorCode::empty_active_set: return "empty_active_set";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace mtlrelu

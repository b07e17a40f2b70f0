#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lyapnav {

enum class ErrorCode {
  invalid_argument,
  numerical_failure,
  not_found,
  degenerate_configuration,
  infeasible,
  dataset_empty,
  training_failure,
  at_goal,
  degenerate_gradient,
  io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::numerical_failure: return "numerical-failure";
    case ErrorCode::not_found: return "not-found";
    case ErrorCode::degenerate_configuration: return "degenerate-configuration";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::dataset_empty: return "dataset-empty";
    case ErrorCode::training_failure: return "training-failure";
    case ErrorCode::at_goal: return "at-goal";
    case ErrorCode::degenerate_gradient: return "degenerate-gradient";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

/// Base exception for every failure raised by the library. The code is the
/// machine-readable category; what() carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Iterative solver gave up; best_estimate is the last value it had.
class NumericalFailure : public Error {
 public:
  NumericalFailure(const std::string& message, double best_estimate)
      : Error(ErrorCode::numerical_failure, message), best_estimate_(best_estimate) {}

  double best_estimate() const noexcept { return best_estimate_; }

 private:
  double best_estimate_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace lyapnav

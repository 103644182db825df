#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tcbm {

enum class ErrorCode {
  NonMonotone,
  NonzeroOrigin,
  TooManyJumps,
  RangeExceeded,
  InvalidConfig,
  InvalidPath,
  OutOfDomain,
  UnsortedTimes,
  GridNotRefined,
  GridMissingJump,
  InverseMismatch,
  NotLambdaAdapted,
  NotStrictlyIncreasing,
  MomentGateFailed,
  NotH0Measurable,
  AxisMismatch,
  PEqualsOne,
  PNotOne,
  TooManyInadmissible,
  ConfigError,
  NumericalFailure,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch without parsing text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tcbm

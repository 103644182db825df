#include "tcbm/error.hpp"

namespace tcbm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonMonotone: return "NonMonotone";
    case ErrorCode::NonzeroOrigin: return "NonzeroOrigin";
    case ErrorCode::TooManyJumps: return "TooManyJumps";
    case ErrorCode::RangeExceeded: return "RangeExceeded";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidPath: return "InvalidPath";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::UnsortedTimes: return "UnsortedTimes";
    case ErrorCode::GridNotRefined: return "GridNotRefined";
    case ErrorCode::GridMissingJump: return "GridMissingJump";
    case ErrorCode::InverseMismatch: return "InverseMismatch";
    case ErrorCode::NotLambdaAdapted: return "NotLambdaAdapted";
    case ErrorCode::NotStrictlyIncreasing: return "NotStrictlyIncreasing";
    case ErrorCode::MomentGateFailed: return "MomentGateFailed";
    case ErrorCode::NotH0Measurable: return "NotH0Measurable";
    case ErrorCode::AxisMismatch: return "AxisMismatch";
    case ErrorCode::PEqualsOne: return "PEqualsOne";
    case ErrorCode::PNotOne: return "PNotOne";
    case ErrorCode::TooManyInadmissible: return "TooManyInadmissible";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
  }
  return "Unknown";
}

}  // namespace tcbm

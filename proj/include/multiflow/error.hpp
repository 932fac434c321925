#pragma once

#include <stdexcept>
#include <string>

namespace multiflow {

enum class ErrorCode {
  // hermite
  NonIntegrable,
  AllCoefficientsZero,
  ParseError,
  // frames
  BetaOutOfRange,
  DimensionTooSmall,
  DimensionMismatch,
  NotUnitNorm,
  NotOrthogonal,
  LinearlyDependent,
  NegativeGram,
  RejectionBudgetExceeded,
  // flow
  NonFiniteState,
  DomainExit,
  // landscape
  TooManyTargets,
  ZeroContraction,
  // experiments
  NoHit,
  NonStationary,
  DegenerateFit,
  ConfigError,
  IoError,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonIntegrable: return "NonIntegrable";
    case ErrorCode::AllCoefficientsZero: return "AllCoefficientsZero";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::BetaOutOfRange: return "BetaOutOfRange";
    case ErrorCode::DimensionTooSmall: return "DimensionTooSmall";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotUnitNorm: return "NotUnitNorm";
    case ErrorCode::NotOrthogonal: return "NotOrthogonal";
    case ErrorCode::LinearlyDependent: return "LinearlyDependent";
    case ErrorCode::NegativeGram: return "NegativeGram";
    case ErrorCode::RejectionBudgetExceeded: return "RejectionBudgetExceeded";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::DomainExit: return "DomainExit";
    case ErrorCode::TooManyTargets: return "TooManyTargets";
    case ErrorCode::ZeroContraction: return "ZeroContraction";
    case ErrorCode::NoHit: return "NoHit";
    case ErrorCode::NonStationary: return "NonStationary";
    case ErrorCode::DegenerateFit: return "DegenerateFit";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Errors that originate in numerical work rather than in user input.
inline bool is_numerical(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonIntegrable:
    case ErrorCode::AllCoefficientsZero:
    case ErrorCode::NonFiniteState:
    case ErrorCode::DomainExit:
    case ErrorCode::ZeroContraction:
    case ErrorCode::NoHit:
    case ErrorCode::NonStationary:
    case ErrorCode::DegenerateFit:
    case ErrorCode::RejectionBudgetExceeded:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace multiflow

#pragma once

#include <stdexcept>
#include <string>

namespace snquant {

enum class ErrorCode {
  WindowTooShort,
  RankDeficientDesign,
  SolverNonConvergence,
  MissingZ,
  TooFewExceedances,
  DimensionMismatch,
  TooManySkippedPoints,
  EmptyGrid,
  ZeroNormalizer,
  SingularLimitNormalizer,
  ZeroDenominator,
  RootNotBracketed,
  NonPositiveDefinite,
  IoError,
  SchemaMismatch,
  MissingColumn,
  NonNumericCell,
  TooFewRows,
  InvalidParameter,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::WindowTooShort: return "WindowTooShort";
    case ErrorCode::RankDeficientDesign: return "RankDeficientDesign";
    case ErrorCode::SolverNonConvergence: return "SolverNonConvergence";
    case ErrorCode::MissingZ: return "MissingZ";
    case ErrorCode::TooFewExceedances: return "TooFewExceedances";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::TooManySkippedPoints: return "TooManySkippedPoints";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::ZeroNormalizer: return "ZeroNormalizer";
    case ErrorCode::SingularLimitNormalizer: return "SingularLimitNormalizer";
    case ErrorCode::ZeroDenominator: return "ZeroDenominator";
    case ErrorCode::RootNotBracketed: return "RootNotBracketed";
    case ErrorCode::NonPositiveDefinite: return "NonPositiveDefinite";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonNumericCell: return "NonNumericCell";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::InvalidParameter: return "InvalidParameter";
  }
  return "Unknown";
}

// All library failures surface as Error; code() gives the machine-readable
// class, what() the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const { return code_; }
  const std::string& detail() const { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
  throw Error(code, detail);
}

inline void require(bool cond, ErrorCode code, const std::string& detail) {
  if (!cond) fail(code, detail);
}

}  // namespace snquant

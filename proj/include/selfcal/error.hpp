#pragma once

#include <stdexcept>
#include <string>

namespace selfcal {

// Machine-readable failure category carried by every exception the library
// throws. The string form is what the CLI reports.
enum class ErrorCode {
  NumericalOverflow,
  Domain,
  Diverged,
  SingularCovariance,
  EmptyBatch,
  UnlabeledInCe,
  UnlabeledInDlsm,
  SgldDiverged,
  NoLabeledData,
  TrainingDiverged,
  GridMismatch,
  InsufficientSamples,
  KTooLarge,
  EmptyTestSet,
  ParseError,
  InvalidArgument,
  Config,
  Io,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NumericalOverflow: return "numerical-overflow";
    case ErrorCode::Domain: return "domain";
    case ErrorCode::Diverged: return "diverged";
    case ErrorCode::SingularCovariance: return "singular-covariance";
    case ErrorCode::EmptyBatch: return "empty-batch";
    case ErrorCode::UnlabeledInCe: return "unlabeled-in-ce";
    case ErrorCode::UnlabeledInDlsm: return "unlabeled-in-dlsm";
    case ErrorCode::SgldDiverged: return "sgld-diverged";
    case ErrorCode::NoLabeledData: return "no-labeled-data";
    case ErrorCode::TrainingDiverged: return "training-diverged";
    case ErrorCode::GridMismatch: return "grid-mismatch";
    case ErrorCode::InsufficientSamples: return "insufficient-samples";
    case ErrorCode::KTooLarge: return "k-too-large";
    case ErrorCode::EmptyTestSet: return "empty-test-set";
    case ErrorCode::ParseError: return "parse-error";
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::Config: return "config";
    case ErrorCode::Io: return "io";
  }
  return "unknown";
}

}  // namespace selfcal

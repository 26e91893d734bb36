#pragma once

#include <stdexcept>
#include <string>

namespace l2d {

enum class ErrorCode {
  NegativeCost,
  TauOutOfRange,
  ZeroVector,
  NegativeEntry,
  BadDimension,
  DimensionMismatch,
  EmptyDataset,
  EmptyLog,
  NonFiniteLoss,
  IoError,
  FormatVersionMismatch,
  ChecksumMismatch,
  BadSpec,
  DomainError,
  OutOfRange,
  NonNegativeTauViolated,
  ParseError,
  InconsistentDims,
  DuplicateQueryId,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::NegativeCost: return "NegativeCost";
    case ErrorCode::TauOutOfRange: return "TauOutOfRange";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NegativeEntry: return "NegativeEntry";
    case ErrorCode::BadDimension: return "BadDimension";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptyLog: return "EmptyLog";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NonNegativeTauViolated: return "NonNegativeTauViolated";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InconsistentDims: return "InconsistentDims";
    case ErrorCode::DuplicateQueryId: return "DuplicateQueryId";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + msg),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

template <ErrorCode C>
class TypedError : public Error {
 public:
  explicit TypedError(const std::string& msg) : Error(C, msg) {}
};

using NegativeCostError = TypedError<ErrorCode::NegativeCost>;
using TauOutOfRangeError = TypedError<ErrorCode::TauOutOfRange>;
using ZeroVectorError = TypedError<ErrorCode::ZeroVector>;
using NegativeEntryError = TypedError<ErrorCode::NegativeEntry>;
using BadDimensionError = TypedError<ErrorCode::BadDimension>;
using DimensionMismatchError = TypedError<ErrorCode::DimensionMismatch>;
using EmptyDatasetError = TypedError<ErrorCode::EmptyDataset>;
using EmptyLogError = TypedError<ErrorCode::EmptyLog>;
using NonFiniteLossError = TypedError<ErrorCode::NonFiniteLoss>;
using IoError = TypedError<ErrorCode::IoError>;
using FormatVersionMismatchError = TypedError<ErrorCode::FormatVersionMismatch>;
using ChecksumMismatchError = TypedError<ErrorCode::ChecksumMismatch>;
using BadSpecError = TypedError<ErrorCode::BadSpec>;
using DomainErrorL2d = TypedError<ErrorCode::DomainError>;
using OutOfRangeError = TypedError<ErrorCode::OutOfRange>;
using NonNegativeTauViolatedError = TypedError<ErrorCode::NonNegativeTauViolated>;
using ParseError = TypedError<ErrorCode::ParseError>;
using InconsistentDimsError = TypedError<ErrorCode::InconsistentDims>;
using DuplicateQueryIdError = TypedError<ErrorCode::DuplicateQueryId>;

}  // namespace l2d

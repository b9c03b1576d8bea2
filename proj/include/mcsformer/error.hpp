#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mcsformer {

enum class ErrorCode {
  EmptyInput,
  TooShort,
  ZeroVariance,
  LengthMismatch,
  SignalTooShort,
  NegativeThreshold,
  InvalidWindow,
  OrderTooHigh,
  RecordTooShort,
  BaselineTooShort,
  FptOutOfRange,
  NoFptDetected,
  NoPostFptWindows,
  ShapeMismatch,
  IndivisibleShape,
  InvalidProbability,
  NonScalarLoss,
  ConfigMismatch,
  IndivisibleGrid,
  OddGrid,
  EmptyBatch,
  EmptyDataset,
  DivergedLoss,
  MissingDirectory,
  MissingFile,
  MalformedRow,
  InconsistentSnapshotLength,
  InvalidConfig,
  VersionMismatch,
  CorruptContainer,
  IoError,
  UsageError,
};

/// Stable identifier of an error class, e.g. "ZeroVariance".
std::string_view error_name(ErrorCode code);

/// Broad failure category used for process exit codes.
enum class ErrorCategory { Usage, Data, Numeric };

ErrorCategory error_category(ErrorCode code);

/// The single exception type thrown by the library. The code names the
/// failure class; the message carries context (file, index, shape).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mcsformer

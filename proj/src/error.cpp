#include "mcsformer/error.hpp"

namespace mcsformer {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::SignalTooShort: return "SignalTooShort";
    case ErrorCode::NegativeThreshold: return "NegativeThreshold";
    case ErrorCode::InvalidWindow: return "InvalidWindow";
    case ErrorCode::OrderTooHigh: return "OrderTooHigh";
    case ErrorCode::RecordTooShort: return "RecordTooShort";
    case ErrorCode::BaselineTooShort: return "BaselineTooShort";
    case ErrorCode::FptOutOfRange: return "FptOutOfRange";
    case ErrorCode::NoFptDetected: return "NoFptDetected";
    case ErrorCode::NoPostFptWindows: return "NoPostFptWindows";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IndivisibleShape: return "IndivisibleShape";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::IndivisibleGrid: return "IndivisibleGrid";
    case ErrorCode::OddGrid: return "OddGrid";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::MissingDirectory: return "MissingDirectory";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::InconsistentSnapshotLength: return "InconsistentSnapshotLength";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptContainer: return "CorruptContainer";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UsageError: return "UsageError";
  }
  return "Unknown";
}

ErrorCategory error_category(ErrorCode code) {
  switch (code) {
    case ErrorCode::UsageError:
    case ErrorCode::InvalidConfig:
    case ErrorCode::ConfigMismatch:
      return ErrorCategory::Usage;
    case ErrorCode::ZeroVariance:
    case ErrorCode::NonScalarLoss:
    case ErrorCode::DivergedLoss:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace mcsformer

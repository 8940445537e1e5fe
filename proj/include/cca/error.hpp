#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace cca {

enum class ErrorCode {
  MissingFile,
  MalformedRecord,
  UnknownLabel,
  UnlabeledCorpus,
  TooFewRecords,
  BadFoldIndex,
  EmptyCorpus,
  VocabTooSmall,
  EmptyText,
  UnknownId,
  InvalidConfig,
  ShapeMismatch,
  IdOutOfRange,
  VersionMismatch,
  CorruptBlob,
  IoFailure,
  NothingToMask,
  EmptyPlan,
  SequenceTooShort,
  InvalidPermutation,
  DivergedLoss,
  EmptyTrainSet,
  LabelMismatch,
  EmptyInput,
  LengthMismatch,
  UnknownDatasetKey,
  UnsupportedFamily,
  UsageError,
};

inline std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::UnknownLabel: return "UnknownLabel";
    case ErrorCode::UnlabeledCorpus: return "UnlabeledCorpus";
    case ErrorCode::TooFewRecords: return "TooFewRecords";
    case ErrorCode::BadFoldIndex: return "BadFoldIndex";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::VocabTooSmall: return "VocabTooSmall";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::UnknownId: return "UnknownId";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IdOutOfRange: return "IdOutOfRange";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptBlob: return "CorruptBlob";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::NothingToMask: return "NothingToMask";
    case ErrorCode::EmptyPlan: return "EmptyPlan";
    case ErrorCode::SequenceTooShort: return "SequenceTooShort";
    case ErrorCode::InvalidPermutation: return "InvalidPermutation";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::EmptyTrainSet: return "EmptyTrainSet";
    case ErrorCode::LabelMismatch: return "LabelMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::UnknownDatasetKey: return "UnknownDatasetKey";
    case ErrorCode::UnsupportedFamily: return "UnsupportedFamily";
    case ErrorCode::UsageError: return "UsageError";
  }
  return "Unknown";
}

/// Library-wide exception type. `context` carries machine-readable detail
/// (line numbers, offending labels, step indices) keyed by short names.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message,
        std::map<std::string, std::string> context = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        message_(std::move(message)),
        context_(std::move(context)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }
  const std::map<std::string, std::string>& context() const noexcept {
    return context_;
  }

 private:
  ErrorCode code_;
  std::string message_;
  std::map<std::string, std::string> context_;
};

[[noreturn]] inline void raise(ErrorCode code, std::string message,
                               std::map<std::string, std::string> context = {}) {
  throw Error(code, std::move(message), std::move(context));
}

} // namespace cca

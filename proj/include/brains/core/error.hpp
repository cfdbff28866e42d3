#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include <json.hpp>

namespace brains {

// Closed set of error codes. Every HTTP error body and CLI diagnostic carries
// one of these names.
enum class ErrorCode {
  RangeViolation,
  MissingRequired,
  UnknownCategory,
  EmptyCorpus,
  OutlierRejected,
  BadConfig,
  BadRatios,
  EmptyText,
  DuplicateId,
  DimensionMismatch,
  EmptyIndex,
  CorruptIndex,
  IoFailure,
  EmptyRetrieval,
  NonFiniteInput,
  MissingRagSlot,
  MultipleRagSlots,
  BackendTimeout,
  BackendHttpError,
  ParseFailure,
  EmptyTrainSplit,
  CorruptCheckpoint,
  VersionMismatch,
  EmptyPairs,
  BadRequest,
  NotFound,
  NotReady,
  Unauthorized,
  Internal,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::RangeViolation: return "RangeViolation";
    case ErrorCode::MissingRequired: return "MissingRequired";
    case ErrorCode::UnknownCategory: return "UnknownCategory";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::OutlierRejected: return "OutlierRejected";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BadRatios: return "BadRatios";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::CorruptIndex: return "CorruptIndex";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::EmptyRetrieval: return "EmptyRetrieval";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::MissingRagSlot: return "MissingRagSlot";
    case ErrorCode::MultipleRagSlots: return "MultipleRagSlots";
    case ErrorCode::BackendTimeout: return "BackendTimeout";
    case ErrorCode::BackendHttpError: return "BackendHttpError";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::EmptyTrainSplit: return "EmptyTrainSplit";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::EmptyPairs: return "EmptyPairs";
    case ErrorCode::BadRequest: return "BadRequest";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::NotReady: return "NotReady";
    case ErrorCode::Unauthorized: return "Unauthorized";
    case ErrorCode::Internal: return "Internal";
  }
  return "Internal";
}

/// Exception carrying a machine-readable code and a structured detail
/// object (e.g. {"field": "mmse", "value": 31, "bound": "[0,30]"}).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, nlohmann::json detail = nlohmann::json::object())
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        message_(std::move(message)),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const nlohmann::json& detail() const noexcept { return detail_; }
  /// what() without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
  nlohmann::json detail_;
};

}  // namespace brains

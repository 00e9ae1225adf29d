#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dmreuse {

enum class ErrorCode {
  EmptyInput,
  ShapeMismatch,
  DimMismatch,
  FormatError,
  NonFiniteValue,
  TooFewSamples,
  RangeError,
  KMismatch,
  VersionMismatch,
  InvalidArgument,
  InsufficientData,
  EmptyStore,
  StorageFailure,
  DuplicateId,
  HashMismatch,
  NotFound,
  UpdateInProgress,
  NotInitialized,
  PayloadTooLarge,
};

std::string_view to_string(ErrorCode code);

/// Base exception for every module. The code is stable and maps one-to-one
/// onto service status codes and CLI exit messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Thrown by the system update pipeline; carries the stage that failed.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.code(), "stage '" + stage + "' failed: " + cause.what()),
        stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace dmreuse

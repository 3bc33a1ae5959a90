#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace synthdet {

enum class ErrorCode {
  InsufficientSource,
  NonIntegerQuota,
  InvalidArgument,
  InvalidImage,
  ImageTooSmall,
  InvalidQuality,
  CropExceedsImage,
  WrongMode,
  ShapeMismatch,
  EmptyStream,
  ConfigMismatch,
  NoPositives,
  DegenerateBatch,
  ChunkTooLarge,
  NonFiniteLoss,
  OutOfRange,
  DataExhausted,
  UnbalancedCalibration,
  InsufficientData,
  SingleClass,
  EmptyGroup,
  UnknownCommand,
  ConfigError,
  IoError,
  ParseError,
};

std::string_view to_string(ErrorCode code);

// Every library failure is raised as an Error carrying a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace synthdet

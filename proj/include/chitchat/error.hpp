#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace chitchat {

enum class ErrorCode {
  kInvalidArgument,
  kEmptyContext,
  kMissingInfo,
  kInsufficientData,
  kNoIds,
  kEmptyCorpus,
  kZeroProbability,
  kNotFound,
  kUnknownModel,
  kNotYourTurn,
  kSessionClosed,
  kWrongState,
  kValidation,
  kDuplicate,
  kDegenerate,
  kParse,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-readable code. All library failures that a
/// caller may want to branch on are raised as this type.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace chitchat

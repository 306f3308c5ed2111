#pragma once

#include <stdexcept>
#include <string>

namespace nexus {

// Every failure the library reports. Codes are grouped into families; the
// CLI maps each family to one process exit code (see exit_code_for).
enum class ErrorCode {
  // configuration / usage
  ConfigError,
  InvalidArgument,
  // data validation
  ParseError,
  LabelOutOfRange,
  DimInconsistent,
  DuplicateId,
  NonFiniteValue,
  EmptyCollection,
  EmptyClass,
  TooFewRows,
  EmptyInput,
  EmptyTrainingSet,
  SingleClass,
  NoRelevant,
  EmptyQuerySet,
  ZeroVector,
  // shape
  DimensionMismatch,
  WidthMismatch,
  LengthMismatch,
  // retrieval
  KTooLarge,
  // persistence
  IoError,
  BadMagic,
  TruncatedFile,
  VersionMismatch,
  MissingArtifact,
  // artifact consistency
  ArtifactMismatch,
};

const char* error_code_name(ErrorCode code);

// Exit-code families: 2 config/usage, 3 data, 4 shape, 5 retrieval,
// 6 persistence, 7 artifact mismatch. 0 is success, 1 unexpected failure.
int exit_code_for(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  ErrorCode code() const { return code_; }

  // The message without the code-name prefix, for re-wrapping.
  const std::string& detail() const { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace nexus

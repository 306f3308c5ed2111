#include "nexus/error.hpp"

namespace nexus {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::DimInconsistent: return "DimInconsistent";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::EmptyCollection: return "EmptyCollection";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::NoRelevant: return "NoRelevant";
    case ErrorCode::EmptyQuerySet: return "EmptyQuerySet";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::MissingArtifact: return "MissingArtifact";
    case ErrorCode::ArtifactMismatch: return "ArtifactMismatch";
  }
  return "UnknownError";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::InvalidArgument:
      return 2;
    case ErrorCode::ParseError:
    case ErrorCode::LabelOutOfRange:
    case ErrorCode::DimInconsistent:
    case ErrorCode::DuplicateId:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::EmptyCollection:
    case ErrorCode::EmptyClass:
    case ErrorCode::TooFewRows:
    case ErrorCode::EmptyInput:
    case ErrorCode::EmptyTrainingSet:
    case ErrorCode::SingleClass:
    case ErrorCode::NoRelevant:
    case ErrorCode::EmptyQuerySet:
    case ErrorCode::ZeroVector:
      return 3;
    case ErrorCode::DimensionMismatch:
    case ErrorCode::WidthMismatch:
    case ErrorCode::LengthMismatch:
      return 4;
    case ErrorCode::KTooLarge:
      return 5;
    case ErrorCode::IoError:
    case ErrorCode::BadMagic:
    case ErrorCode::TruncatedFile:
    case ErrorCode::VersionMismatch:
    case ErrorCode::MissingArtifact:
      return 6;
    case ErrorCode::ArtifactMismatch:
      return 7;
  }
  return 1;
}

}  // namespace nexus

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dataforge {

enum class ErrorCode {
  kTypeError,
  kUnknownLabel,
  kParseError,
  kUnknownTypeTag,
  kIoError,
  kDiskFull,
  kBadMagic,
  kUnsupportedVersion,
  kTruncatedFile,
  kChecksumMismatch,
  kOutOfBounds,
  kUnknownColumn,
  kSchemaMismatch,
  kUnknownDataset,
  kUnknownSplit,
  kDownloadError,
  kTransformError,
  kUnknownTransform,
  kUnorderableType,
  kTooFewRows,
  kWrongType,
  kZeroVector,
  kDimensionMismatch,
  kLengthMismatch,
  kMetricMismatch,
  kEmptyState,
  kMissingFrontMatter,
  kMalformedTag,
  kUnknownVocabularyValue,
  kValidationFailed,
  kPortInUse,
  kInvalidArgument,
};

std::string_view error_code_name(ErrorCode code);

/// Every domain failure in the library is reported through this type. The
/// code is stable and machine-checkable; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Failure tied to a location in a text source (1-based line, 0 if unknown).
class ParseError : public Error {
 public:
  ParseError(const std::string& message, size_t line, size_t column = 0)
      : Error(ErrorCode::kParseError, message), line_(line), column_(column) {}

  size_t line() const noexcept { return line_; }
  size_t column() const noexcept { return column_; }

 private:
  size_t line_;
  size_t column_;
};

/// Value failed schema validation; path points at the offending leaf
/// (empty string means the root value).
class TypeError : public Error {
 public:
  TypeError(const std::string& message, std::string path, size_t line = 0)
      : Error(ErrorCode::kTypeError, message), path_(std::move(path)), line_(line) {}

  const std::string& path() const noexcept { return path_; }
  size_t line() const noexcept { return line_; }

 private:
  std::string path_;
  size_t line_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace dataforge

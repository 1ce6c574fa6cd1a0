#include "dataforge/error.hpp"

namespace dataforge {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kTypeError: return "type_error";
    case ErrorCode::kUnknownLabel: return "unknown_label";
    case ErrorCode::kParseError: return "parse_error";
    case ErrorCode::kUnknownTypeTag: return "unknown_type_tag";
    case ErrorCode::kIoError: return "io_error";
    case ErrorCode::kDiskFull: return "disk_full";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kUnsupportedVersion: return "unsupported_version";
    case ErrorCode::kTruncatedFile: return "truncated_file";
    case ErrorCode::kChecksumMismatch: return "checksum_mismatch";
    case ErrorCode::kOutOfBounds: return "out_of_bounds";
    case ErrorCode::kUnknownColumn: return "unknown_column";
    case ErrorCode::kSchemaMismatch: return "schema_mismatch";
    case ErrorCode::kUnknownDataset: return "unknown_dataset";
    case ErrorCode::kUnknownSplit: return "unknown_split";
    case ErrorCode::kDownloadError: return "download_error";
    case ErrorCode::kTransformError: return "transform_error";
    case ErrorCode::kUnknownTransform: return "unknown_transform";
    case ErrorCode::kUnorderableType: return "unorderable_type";
    case ErrorCode::kTooFewRows: return "too_few_rows";
    case ErrorCode::kWrongType: return "wrong_type";
    case ErrorCode::kZeroVector: return "zero_vector";
    case ErrorCode::kDimensionMismatch: return "dimension_mismatch";
    case ErrorCode::kLengthMismatch: return "length_mismatch";
    case ErrorCode::kMetricMismatch: return "metric_mismatch";
    case ErrorCode::kEmptyState: return "empty_state";
    case ErrorCode::kMissingFrontMatter: return "missing_front_matter";
    case ErrorCode::kMalformedTag: return "malformed_tag";
    case ErrorCode::kUnknownVocabularyValue: return "unknown_vocabulary_value";
    case ErrorCode::kValidationFailed: return "validation_failed";
    case ErrorCode::kPortInUse: return "port_in_use";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
  }
  return "unknown";
}

}  // namespace dataforge

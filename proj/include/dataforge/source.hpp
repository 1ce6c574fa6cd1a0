#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "dataforge/schema.hpp"

namespace dataforge {

enum class SourceFormat { kCsv, kJsonl, kText };

std::string_view format_name(SourceFormat f);
SourceFormat format_from_name(std::string_view name);

struct FormatOptions {
  char delimiter = ',';
  bool has_header = true;
  /// Also inferred from a ".gz" suffix.
  bool gzip = false;
};

inline constexpr std::size_t kReadBufferBytes = 8u << 20;

/// Pull interface over raw bytes. read() returns 0 only at end of input.
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  virtual std::size_t read(char* dst, std::size_t n) = 0;
};

std::unique_ptr<ByteSource> open_file_source(const std::filesystem::path& path);
/// Streams an http(s) URL through a prefetch thread; errors surface from read().
std::unique_ptr<ByteSource> open_http_source(const std::string& url, std::size_t buffer_bytes = kReadBufferBytes);
std::unique_ptr<ByteSource> inflate_source(std::unique_ptr<ByteSource> inner);

/// Opens a local path, file:// URL or http(s) URL. Relative paths resolve
/// against base_dir.
std::unique_ptr<ByteSource> open_source(const std::string& location, const std::filesystem::path& base_dir,
                                        bool gzip);

bool is_remote(std::string_view location);
bool looks_gzipped(std::string_view location);
std::filesystem::path resolve_local(const std::string& location, const std::filesystem::path& base_dir);

/// Buffered line splitter. Lines exclude the terminator; a trailing "\r" is
/// kept so CSV can see it.
class LineReader {
 public:
  explicit LineReader(std::unique_ptr<ByteSource> src, std::size_t buffer_bytes = kReadBufferBytes);

  /// Returns false at end of input. `line` is valid until the next call.
  bool next(std::string& line);
  std::uint64_t line_number() const { return line_no_; }

 private:
  bool fill();

  std::unique_ptr<ByteSource> src_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
  bool eof_ = false;
  std::uint64_t line_no_ = 0;
};

/// RFC 4180 records: quoted fields may hold delimiters, doubled quotes and
/// line breaks; CRLF and LF both end a record.
class CsvReader {
 public:
  CsvReader(std::unique_ptr<ByteSource> src, char delimiter);

  bool next(std::vector<std::string>& fields);
  /// Line on which the last returned record started.
  std::uint64_t record_line() const { return record_line_; }

 private:
  LineReader lines_;
  char delim_;
  std::string line_;
  std::uint64_t record_line_ = 0;
};

/// A column's source accessor: a CSV header name or index, a JSON pointer or
/// top-level key, or "line" for text sources.
using FieldMap = std::map<std::string, nlohmann::json>;

/// Parses, converts and validates rows from one source.
class RowReader {
 public:
  RowReader(std::unique_ptr<ByteSource> src, SourceFormat format, FormatOptions options, const FieldMap& field_map,
            Schema schema, std::string label = "");

  std::optional<Row> next();
  std::uint64_t line() const { return line_; }

 private:
  Value convert_cell(std::size_t col, const std::string& cell);
  [[noreturn]] void rethrow_with_line();

  SourceFormat format_;
  Schema schema_;
  std::string label_;
  std::unique_ptr<LineReader> lines_;
  std::unique_ptr<CsvReader> csv_;
  std::vector<nlohmann::json> accessors_;
  std::vector<std::size_t> csv_index_;
  std::vector<nlohmann::json::json_pointer> pointers_;
  std::string scratch_;
  std::vector<std::string> fields_;
  std::uint64_t line_ = 0;
};

}  // namespace dataforge

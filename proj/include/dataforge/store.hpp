#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dataforge/hash.hpp"
#include "dataforge/schema.hpp"

namespace dataforge {

inline constexpr std::uint64_t kDefaultBatchRows = 10'000;
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr char kMagic[6] = {'D', 'S', 'E', 'T', '1', '\0'};

/// Read-only memory mapping of a whole file.
class MappedFile {
 public:
  explicit MappedFile(const std::filesystem::path& path);
  ~MappedFile();
  MappedFile(const MappedFile&) = delete;
  MappedFile& operator=(const MappedFile&) = delete;

  std::span<const std::byte> bytes() const { return {static_cast<const std::byte*>(data_), size_}; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  void* data_ = nullptr;
  std::size_t size_ = 0;
};

/// Decoded view over one array inside a batch. Spans point into the mapping.
struct ArrayView {
  std::span<const std::byte> data;
  std::span<const std::uint64_t> offsets;
  std::vector<ArrayView> children;
};

struct ColumnView {
  std::span<const std::uint8_t> validity;
  ArrayView array;
};

struct BatchRef {
  std::shared_ptr<const MappedFile> file;
  std::uint64_t rows = 0;
  std::vector<std::span<const std::byte>> buffers;
  std::vector<ColumnView> columns;
};

/// Global instrumentation, read by tests.
struct StoreCounters {
  std::atomic<std::uint64_t> offsets_reads{0};
  std::atomic<std::uint64_t> rows_decoded{0};
};
StoreCounters& store_counters();

class ColumnReader;

/// Immutable memory-mapped table. Copies share the same state.
class Table {
 public:
  Table() = default;

  const Schema& schema() const;
  std::uint64_t num_rows() const;
  std::size_t num_batches() const;
  const std::vector<std::uint64_t>& cumulative_rows() const;
  const Fingerprint& fingerprint() const;
  /// Backing file; empty for tables assembled by concat_tables.
  const std::filesystem::path& path() const;
  const BatchRef& batch(std::size_t b) const;

  /// Index b with cumulative_rows[b-1] <= row < cumulative_rows[b].
  std::size_t batch_for_row(std::uint64_t row) const;

  Row row(std::uint64_t i) const;
  Value cell(std::uint64_t row, std::size_t column) const;
  /// Decodes only batches overlapping [start, end). Throws kOutOfBounds.
  std::vector<Row> slice(std::uint64_t start, std::uint64_t end) const;
  std::vector<Row> read_all() const;
  /// Calls fn for every row in order without materializing the table.
  void for_each_row(const std::function<void(std::uint64_t, const Row&)>& fn) const;

  /// Throws kUnknownColumn.
  ColumnReader column(std::string_view name) const;

  bool valid() const { return static_cast<bool>(state_); }

  struct State;
  explicit Table(std::shared_ptr<const State> state) : state_(std::move(state)) {}

 private:
  const State& state() const;
  std::shared_ptr<const State> state_;
};

/// Sequential reader over one column. Fixed-width columns also expose their
/// raw per-batch buffers without copying.
class ColumnReader {
 public:
  ColumnReader(Table table, std::size_t column);

  std::optional<Value> next();
  std::uint64_t size() const { return table_.num_rows(); }
  const FeatureType& type() const;

  /// Int64 or ClassLabel columns: one span per batch, backed by the mapping.
  std::vector<std::span<const std::int64_t>> int64_chunks() const;
  std::vector<std::span<const double>> float64_chunks() const;
  /// Number of null slots (reads validity bitmaps only).
  std::uint64_t null_count() const;

 private:
  Table table_;
  std::size_t column_;
  std::size_t batch_ = 0;
  std::uint64_t index_ = 0;
};

/// Sum of an Int64/ClassLabel column via the SIMD kernels; null slots count 0.
std::int64_t column_sum_int64(const Table& table, std::string_view column);

struct OpenOptions {
  bool verify = false;
};

/// Maps the file and reads the footer. verify=true rehashes every buffer.
Table open_table(const std::filesystem::path& path, OpenOptions options = {});

/// Streams validated rows into a DSET1 file. Writes go to a temporary file
/// that is renamed over `path` on finish().
class TableWriter {
 public:
  TableWriter(std::filesystem::path path, Schema schema, std::uint64_t batch_rows = kDefaultBatchRows);
  ~TableWriter();
  TableWriter(const TableWriter&) = delete;
  TableWriter& operator=(const TableWriter&) = delete;

  /// Throws TypeError when the row does not validate.
  void append(const Row& row);
  std::uint64_t rows_written() const;
  Table finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Table write_table(const Schema& schema, std::span<const Row> rows, const std::filesystem::path& path,
                  std::uint64_t batch_rows = kDefaultBatchRows);
/// Pull-based variant: `next` returns nullopt at end of stream.
Table write_table(const Schema& schema, const std::function<std::optional<Row>()>& next,
                  const std::filesystem::path& path, std::uint64_t batch_rows = kDefaultBatchRows);

/// Batch-reference concatenation; no rows are re-encoded. Throws
/// kSchemaMismatch, or kInvalidArgument for an empty list.
Table concat_tables(std::span<const Table> tables);

struct DatasetInfo {
  std::string id;
  std::string description;
  std::string citation;
  std::string version;
  std::string license;
  std::map<std::string, std::uint64_t> split_rows;
  /// source url -> sha256
  std::map<std::string, std::string> download_checksums;
  std::vector<std::string> recommended_metrics;
  std::string builder_fingerprint;
};

nlohmann::json info_to_json(const DatasetInfo& info);
DatasetInfo info_from_json(const nlohmann::json& j);

struct DatasetDict {
  std::map<std::string, Table> splits;
  DatasetInfo info;
  std::vector<std::string> warnings;

  /// Throws kUnknownSplit.
  const Table& split(const std::string& name) const;
};

}  // namespace dataforge

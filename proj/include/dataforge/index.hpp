#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dataforge/store.hpp"

namespace dataforge {

struct Hit {
  std::uint64_t row = 0;
  double score = 0;

  friend bool operator==(const Hit&, const Hit&) = default;
};

struct Posting {
  std::uint64_t row = 0;
  std::uint32_t tf = 0;

  friend bool operator==(const Posting&, const Posting&) = default;
};

struct Bm25Params {
  double k1 = 1.5;
  double b = 0.75;

  friend bool operator==(const Bm25Params&, const Bm25Params&) = default;
};

/// Inverted index with BM25 ranking. Null cells count as empty documents.
class TextIndex {
 public:
  TextIndex() = default;

  /// Throws kUnknownColumn, kWrongType.
  static TextIndex build(const Table& table, const std::string& column, Bm25Params params = {});
  /// Index over in-memory documents; row ids are positions.
  static TextIndex from_documents(std::span<const std::string> docs, Bm25Params params = {});

  /// Unique query terms contribute in sorted order. Ties go to the smaller
  /// row id; zero scores are dropped.
  std::vector<Hit> query(std::string_view query, std::size_t k) const;

  /// BM25 inverse document frequency ln((N - n + 0.5) / (n + 0.5) + 1).
  double idf(std::string_view term) const;

  std::uint64_t doc_count() const { return doc_len_.size(); }
  double avgdl() const { return avgdl_; }
  std::uint32_t doc_length(std::uint64_t row) const { return doc_len_.at(row); }
  const std::vector<Posting>& postings(std::string_view term) const;
  std::size_t term_count() const { return postings_.size(); }
  const Bm25Params& params() const { return params_; }

  void save(const std::filesystem::path& path) const;
  /// Throws kBadMagic, kUnsupportedVersion, kTruncatedFile.
  static TextIndex load(const std::filesystem::path& path);

  friend bool operator==(const TextIndex&, const TextIndex&) = default;

 private:
  void add_document(std::string_view text);
  void finish();

  Bm25Params params_;
  std::map<std::string, std::vector<Posting>, std::less<>> postings_;
  std::vector<std::uint32_t> doc_len_;
  double avgdl_ = 0;
};

enum class Metric { kCosine, kInnerProduct, kL2 };

std::string_view metric_name(Metric m);
Metric metric_from_name(std::string_view name);

/// Exact nearest-neighbour search over float32 rows.
class VectorIndex {
 public:
  VectorIndex() = default;

  /// Column must be a rank-1 float tensor; null rows are skipped. Cosine
  /// stores unit-length copies and throws kZeroVector on a zero row.
  static VectorIndex build(const Table& table, const std::string& column, Metric metric);
  static VectorIndex from_vectors(std::vector<float> data, std::size_t dim, Metric metric);

  /// Cosine and inner product: score descending. L2: Euclidean distance
  /// ascending. Ties go to the smaller row id. Throws kDimensionMismatch.
  std::vector<Hit> query(std::span<const float> q, std::size_t k) const;

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return rows_.size(); }
  Metric metric() const { return metric_; }
  std::span<const float> vector(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  std::uint64_t row_id(std::size_t i) const { return rows_[i]; }

  void save(const std::filesystem::path& path) const;
  static VectorIndex load(const std::filesystem::path& path);

  friend bool operator==(const VectorIndex&, const VectorIndex&) = default;

 private:
  Metric metric_ = Metric::kCosine;
  std::size_t dim_ = 0;
  std::vector<std::uint64_t> rows_;
  std::vector<float> data_;
};

/// `<cache>/indexes/<table-fp>/<column>.<ext>`.
std::filesystem::path index_path(const std::filesystem::path& cache_dir, const Table& table, const std::string& column,
                                 std::string_view ext);

/// Loads the cached index when present, otherwise builds and saves it.
TextIndex text_index_for(const std::filesystem::path& cache_dir, const Table& table, const std::string& column);
VectorIndex vector_index_for(const std::filesystem::path& cache_dir, const Table& table, const std::string& column,
                             Metric metric);

}  // namespace dataforge

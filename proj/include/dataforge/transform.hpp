#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "dataforge/hash.hpp"
#include "dataforge/store.hpp"

namespace dataforge {

enum class OpKind { kMap, kFilter, kSort, kShuffle, kSelect, kTrainTestSplit };

std::string_view op_kind_name(OpKind kind);

inline constexpr std::uint64_t kDefaultMapBatchSize = 1'000;

/// Identity of one processing step. `params` is compared and hashed in its
/// canonical (sorted-key, compact) serialization.
struct TransformSpec {
  OpKind op_kind = OpKind::kMap;
  std::string transform_id;
  std::string transform_version;
  nlohmann::json params = nlohmann::json::object();
  bool batched = false;
  std::uint64_t batch_size = kDefaultMapBatchSize;
};

/// SHA-256 over parent || op_kind || id || version || params || batched ||
/// batch_size, each field length-prefixed.
Fingerprint chain_fingerprint(const Fingerprint& parent, const TransformSpec& spec);

using BatchFn = std::function<std::vector<Row>(std::span<const Row>)>;
using PredicateFn = std::function<bool(const Row&)>;

/// A named, versioned function. Changing behavior without bumping the
/// version silently reuses stale caches.
struct TransformDef {
  enum class Kind { kMap, kPredicate };

  std::string id;
  std::string version;
  Kind kind = Kind::kMap;
  /// Maps only: output schema from input schema and params.
  std::function<Schema(const Schema&, const nlohmann::json&)> output_schema;
  std::function<BatchFn(const Schema&, const nlohmann::json&)> make_map;
  std::function<PredicateFn(const Schema&, const nlohmann::json&)> make_predicate;
};

class TransformRegistry {
 public:
  /// Registry preloaded with identity, lowercase, concat_fields,
  /// whitespace_tokenize, length and the not_null/int_mod/contains predicates.
  static TransformRegistry with_builtins();

  void add(TransformDef def);
  /// Throws kUnknownTransform.
  const TransformDef& get(const std::string& id) const;
  bool contains(const std::string& id) const { return defs_.count(id) != 0; }
  std::vector<std::string> ids() const;

  /// Fills in transform_version from the registered definition.
  TransformSpec spec(OpKind kind, const std::string& id, nlohmann::json params = nlohmann::json::object(),
                     bool batched = false, std::uint64_t batch_size = kDefaultMapBatchSize) const;

 private:
  std::map<std::string, TransformDef> defs_;
};

struct SplitResult {
  Table train;
  Table test;
};

/// Runs dataset manipulations with results cached under
/// `<cache>/transforms/<fingerprint>.dset`, keyed by chain_fingerprint of the
/// input table's fingerprint and the step.
class Transformer {
 public:
  Transformer(std::filesystem::path cache_dir, const TransformRegistry& registry);

  Table map(const Table& input, const TransformSpec& spec, const Schema& out_schema, unsigned workers = 1);
  /// Output schema derived from the registered definition.
  Table map(const Table& input, const TransformSpec& spec, unsigned workers = 1);
  Table filter(const Table& input, const TransformSpec& spec, unsigned workers = 1);
  /// Stable; nulls first ascending and last descending; NaN after numbers.
  Table sort(const Table& input, const std::string& column, bool descending = false);
  Table shuffle(const Table& input, std::uint64_t seed);
  SplitResult train_test_split(const Table& input, double test_fraction, std::uint64_t seed);
  Table select(const Table& input, std::span<const std::uint64_t> indices);

  /// Number of calls into user map/predicate functions since construction.
  std::uint64_t invocations() const { return invocations_.load(); }
  std::uint64_t cache_hits() const { return cache_hits_.load(); }
  const std::filesystem::path& cache_dir() const { return cache_dir_; }

  std::filesystem::path cache_path(const Fingerprint& fp) const;

 private:
  std::optional<Table> cached(const Fingerprint& fp, const Schema& expected) const;
  Table run_sharded(const Table& input, const TransformSpec& spec, const Schema& out_schema, unsigned workers,
                    const Fingerprint& fp);
  Table gather(const Table& input, std::span<const std::uint64_t> indices, const Fingerprint& fp);

  std::filesystem::path cache_dir_;
  const TransformRegistry& registry_;
  mutable std::atomic<std::uint64_t> invocations_{0};
  mutable std::atomic<std::uint64_t> cache_hits_{0};
};

/// Eager take/skip helpers (row ranges), used by streaming equivalence checks.
std::vector<std::uint64_t> index_range(std::uint64_t begin, std::uint64_t end);

}  // namespace dataforge

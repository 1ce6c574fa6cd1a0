#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "dataforge/hash.hpp"
#include "dataforge/schema.hpp"
#include "dataforge/source.hpp"
#include "dataforge/store.hpp"

namespace dataforge {

struct SourceRef {
  /// http(s) URL, file:// URL, or a path relative to the builder directory.
  std::string url;
  std::optional<std::string> sha256;
};

/// Declarative recipe turning raw text sources into typed splits.
struct BuilderDef {
  std::string id;
  std::string version;
  std::string description;
  std::string citation;
  std::string license;
  std::map<std::string, std::vector<SourceRef>> sources;
  SourceFormat format = SourceFormat::kJsonl;
  FormatOptions options;
  Schema schema;
  FieldMap field_map;
  std::vector<std::string> recommended_metrics;
  /// Not serialized. Relative source paths resolve against it.
  std::filesystem::path base_dir;
};

/// Canonical form: all fields present, keys sorted.
nlohmann::json builder_to_json(const BuilderDef& def);
/// Validates id, version, splits and field_map coverage.
BuilderDef builder_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
BuilderDef load_builder(const std::filesystem::path& builder_json);

Fingerprint builder_fingerprint(const BuilderDef& def);

bool is_valid_dataset_id(std::string_view id);

struct DownloadRecord {
  std::string url;
  std::filesystem::path path;
  std::string sha256;
  std::uint64_t size = 0;
  std::int64_t fetched_at = 0;  // unix seconds
};

struct DownloadOptions {
  int retries = 3;
  /// Backoff before retry i (1-based) is 2^(i-1) seconds.
  std::function<void(std::chrono::milliseconds)> sleep;
};

/// Reads from original sources (not from the download cache).
struct DownloadCounters {
  std::atomic<std::uint64_t> source_opens{0};
  std::atomic<std::uint64_t> http_attempts{0};
};
DownloadCounters& download_counters();

/// Fetches into `<cache>/downloads/<sha256-of-url>`, skipping the fetch when a
/// cached copy is present and matches.
DownloadRecord download_and_verify(const SourceRef& src, const std::filesystem::path& cache_dir,
                                   const std::filesystem::path& base_dir = {}, const DownloadOptions& options = {});

/// `<cache>/datasets/<id>/<version>/<builder-fp>`.
std::filesystem::path dataset_cache_dir(const BuilderDef& def, const std::filesystem::path& cache_dir);

/// Opens previously built splits; nullopt if any piece is missing.
std::optional<DatasetDict> open_built_dataset(const BuilderDef& def, const std::filesystem::path& cache_dir);

/// Cache hit or download + parse + write of every split.
DatasetDict build_dataset(const BuilderDef& def, const std::filesystem::path& cache_dir,
                          const DownloadOptions& options = {});

}  // namespace dataforge

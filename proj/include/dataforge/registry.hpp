#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "dataforge/builder.hpp"
#include "dataforge/store.hpp"

namespace dataforge {

/// Tag key -> values. Keys come from tag_keys(); size_category and
/// multilinguality hold at most one value.
using TagSet = std::map<std::string, std::vector<std::string>>;

const std::vector<std::string>& tag_keys();
bool is_single_valued_tag(std::string_view key);

/// Size bucket for a total row count, e.g. "1K<n<10K".
std::string size_category_for(std::uint64_t rows);

/// Allowed values per tag key, one `<key>.txt` file per key.
class Vocabulary {
 public:
  static Vocabulary load(const std::filesystem::path& dir);
  /// `<dir>` if it holds vocab files, else $DATAFORGE_VOCAB_DIR, else the
  /// copy shipped with the sources.
  static Vocabulary locate(const std::filesystem::path& registry_root);

  bool allows(const std::string& key, const std::string& value) const;
  const std::set<std::string>& values(const std::string& key) const;

 private:
  std::map<std::string, std::set<std::string>> values_;
};

struct CardSection {
  int level = 1;
  std::string title;
  /// Text between this heading and the next one of any level.
  std::string body;
  std::size_t line = 0;
};

struct DataCard {
  TagSet tags;
  std::vector<CardSection> sections;
  std::size_t body_line = 0;
};

/// Throws kMissingFrontMatter, kMalformedTag (message carries the line).
DataCard parse_card(std::string_view text);

struct Finding {
  enum class Severity { kWarning, kError };
  Severity severity = Severity::kError;
  /// missing_section, missing_subsection, empty_section,
  /// split_count_mismatch, unknown_split, vocabulary_violation,
  /// size_category_mismatch
  std::string kind;
  std::string message;

  bool is_error() const { return severity == Severity::kError; }
  nlohmann::json to_json() const;
};

/// Split counts stated in the "Data Splits" section as `name: N` lines or
/// `| name | N |` table rows.
std::map<std::string, std::uint64_t> stated_split_counts(const DataCard& card);

/// Empty result means the card is fully valid. `info` enables the split and
/// size checks.
std::vector<Finding> validate_card(const DataCard& card, const Vocabulary& vocab, const DatasetInfo* info = nullptr);

struct RegistryEntry {
  std::string id;
  std::string builder = "builder.json";
  /// 0 until a card is added.
  std::uint64_t card_revision = 0;
  std::vector<std::string> models;

  friend bool operator==(const RegistryEntry&, const RegistryEntry&) = default;
};

nlohmann::json entry_to_json(const RegistryEntry& entry);
RegistryEntry entry_from_json(const nlohmann::json& j);

/// Filter key -> accepted values. AND across keys, OR within one key; an
/// empty value list places no constraint.
using TagFilter = std::map<std::string, std::vector<std::string>>;

/// Directory of `<id>/{entry.json,builder.json,cards/<rev>.md}`.
class Registry {
 public:
  /// Every subdirectory holding entry.json becomes an entry.
  static Registry open(const std::filesystem::path& root);

  const std::filesystem::path& root() const { return root_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  std::vector<std::string> ids() const;
  bool contains(const std::string& id) const { return entries_.count(id) > 0; }

  /// Throws kUnknownDataset.
  const RegistryEntry& entry(const std::string& id) const;
  BuilderDef builder(const std::string& id) const;
  std::filesystem::path card_path(const std::string& id, std::uint64_t revision) const;
  /// Current card text; nullopt when the entry has none.
  std::optional<std::string> card_text(const std::string& id) const;
  /// Tags of the current card, empty without one or when it fails to parse.
  const TagSet& tags(const std::string& id) const;

  /// Sorted ids. Throws kInvalidArgument for an unknown key and
  /// kUnknownVocabularyValue for a value outside the vocabulary.
  std::vector<std::string> search(const TagFilter& filter) const;

  /// Writes a new entry. Throws kInvalidArgument if the id exists.
  RegistryEntry add_entry(const std::string& id, const nlohmann::json& builder_json,
                          const std::optional<std::string>& card = std::nullopt,
                          const std::vector<std::string>& models = {});

  /// Stores the card as the next revision, keeping earlier ones. Throws the
  /// parse errors or kValidationFailed, leaving the entry untouched.
  RegistryEntry bump_card_revision(const std::string& id, const std::string& card_text,
                                   const DatasetInfo* info = nullptr);

 private:
  struct Loaded {
    RegistryEntry entry;
    TagSet tags;
  };
  void load_entry(const std::filesystem::path& dir);

  std::filesystem::path root_;
  Vocabulary vocab_;
  std::map<std::string, Loaded> entries_;
};

/// Builds (or reopens) a registered dataset. Card findings become warnings
/// on the result; they never block loading.
DatasetDict load_dataset(const Registry& registry, const std::string& id, const std::filesystem::path& cache_dir,
                         const DownloadOptions& options = {});

}  // namespace dataforge

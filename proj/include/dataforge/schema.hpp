#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "dataforge/value.hpp"

namespace dataforge {

enum class TypeTag {
  kInt64,
  kFloat64,
  kBool,
  kString,
  kBinary,
  kClassLabel,
  kSequence,
  kTranslation,
  kTensor,
  kRecord,
};

enum class TensorDtype { kInt64, kFloat32, kFloat64 };

std::string_view tag_name(TypeTag tag);
std::string_view dtype_name(TensorDtype dtype);
std::size_t dtype_size(TensorDtype dtype);

inline constexpr int kMaxNestingDepth = 32;

struct Field;

/// Immutable, cheaply copyable column type. Constructors enforce the type
/// invariants and throw Error(kInvalidArgument) on violation.
class FeatureType {
 public:
  static FeatureType int64();
  static FeatureType float64();
  static FeatureType boolean();
  static FeatureType string();
  static FeatureType binary();
  static FeatureType class_label(std::vector<std::string> names);
  static FeatureType sequence(FeatureType inner, std::optional<std::uint64_t> fixed_length = std::nullopt);
  static FeatureType translation(std::vector<std::string> languages);
  static FeatureType tensor(TensorDtype dtype, std::vector<std::uint64_t> shape);
  static FeatureType record(std::vector<Field> fields);

  TypeTag tag() const;
  /// Nesting depth; atomic types have depth 1.
  int depth() const;

  // ClassLabel
  const std::vector<std::string>& label_names() const;
  std::int64_t str2int(std::string_view name) const;
  const std::string& int2str(std::int64_t code) const;

  // Sequence
  const FeatureType& inner() const;
  std::optional<std::uint64_t> fixed_length() const;

  // Translation
  const std::vector<std::string>& languages() const;

  // Tensor
  TensorDtype dtype() const;
  const std::vector<std::uint64_t>& shape() const;
  std::uint64_t element_count() const;

  // Record
  const std::vector<Field>& fields() const;

  /// Int64, Float64, Bool, ClassLabel and Tensor have a fixed byte width.
  bool is_fixed_width() const;
  /// Types `sort` accepts as keys.
  bool is_orderable() const;

  friend bool operator==(const FeatureType& a, const FeatureType& b);

  struct Node;  // defined in schema.cpp

 private:
  explicit FeatureType(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  const Node& node() const;

  std::shared_ptr<const Node> node_;
};

struct Field {
  std::string name;
  FeatureType type;
  friend bool operator==(const Field&, const Field&) = default;
};

struct Column {
  std::string name;
  FeatureType type;
  bool nullable = false;
  friend bool operator==(const Column&, const Column&) = default;
};

class Schema {
 public:
  Schema() = default;
  /// Validates names (unique, non-empty, `[A-Za-z0-9_.-]+`) and that there
  /// is at least one column.
  explicit Schema(std::vector<Column> columns);

  const std::vector<Column>& columns() const { return columns_; }
  std::size_t size() const { return columns_.size(); }
  const Column& operator[](std::size_t i) const { return columns_[i]; }

  std::optional<std::size_t> find(std::string_view name) const;
  /// Throws Error(kUnknownColumn).
  std::size_t index_of(std::string_view name) const;

  friend bool operator==(const Schema& a, const Schema& b) { return a.columns_ == b.columns_; }

 private:
  std::vector<Column> columns_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

/// Throws TypeError with a path such as `answers.text[3]`; `path` is the
/// prefix of the value being checked.
void validate_value(const FeatureType& type, const Value& value, const std::string& path = "");
/// Validates arity, per-column nullability and every cell.
void validate_row(const Schema& schema, const Row& row);

// Canonical JSON: sorted keys, no insignificant whitespace.
std::string schema_to_json(const Schema& schema);
Schema schema_from_json(std::string_view text);
nlohmann::json type_to_json(const FeatureType& type);
FeatureType type_from_json(const nlohmann::json& j);
nlohmann::json schema_to_json_value(const Schema& schema);
Schema schema_from_json_value(const nlohmann::json& j);

/// Type-directed conversion from JSON input (jsonl sources, CLI, manifests).
/// Float columns accept JSON integers, ClassLabel accepts codes or label
/// strings, Binary takes base64 text, Tensor takes flat or nested lists.
Value value_from_json(const FeatureType& type, const nlohmann::json& j, const std::string& path = "");
/// Display rendering: ClassLabel -> {"code","label"}, Tensor -> nested lists,
/// Binary -> base64 text, non-finite floats -> "NaN"/"Infinity"/"-Infinity".
nlohmann::json value_to_json(const FeatureType& type, const Value& value);
nlohmann::json row_to_json(const Schema& schema, const Row& row);

/// Untyped conversion, used for parameters and fingerprints.
nlohmann::json plain_to_json(const Value& value);

bool is_valid_utf8(std::string_view text);
std::string base64_encode(std::string_view bytes);
/// Throws Error(kInvalidArgument) on malformed input.
std::string base64_decode(std::string_view text);

}  // namespace dataforge

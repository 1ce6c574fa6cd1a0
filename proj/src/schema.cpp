#include "dataforge/schema.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <regex>
#include <set>

#include <openssl/evp.h>

#include "dataforge/error.hpp"

namespace dataforge {

using nlohmann::json;

struct FeatureType::Node {
  TypeTag tag = TypeTag::kInt64;
  std::vector<std::string> names;  // class labels or translation languages
  std::optional<FeatureType> inner;
  std::optional<std::uint64_t> fixed_length;
  TensorDtype dtype = TensorDtype::kFloat32;
  std::vector<std::uint64_t> shape;
  std::vector<Field> fields;
  int depth = 1;
};

namespace {

std::shared_ptr<const FeatureType::Node> atomic_node(TypeTag tag) {
  auto n = std::make_shared<FeatureType::Node>();
  n->tag = tag;
  return n;
}

[[noreturn]] void invalid(const std::string& what) { fail(ErrorCode::kInvalidArgument, what); }

}  // namespace

std::string_view tag_name(TypeTag tag) {
  switch (tag) {
    case TypeTag::kInt64: return "int64";
    case TypeTag::kFloat64: return "float64";
    case TypeTag::kBool: return "bool";
    case TypeTag::kString: return "string";
    case TypeTag::kBinary: return "binary";
    case TypeTag::kClassLabel: return "class_label";
    case TypeTag::kSequence: return "sequence";
    case TypeTag::kTranslation: return "translation";
    case TypeTag::kTensor: return "tensor";
    case TypeTag::kRecord: return "record";
  }
  return "?";
}

std::string_view dtype_name(TensorDtype dtype) {
  switch (dtype) {
    case TensorDtype::kInt64: return "int64";
    case TensorDtype::kFloat32: return "float32";
    case TensorDtype::kFloat64: return "float64";
  }
  return "?";
}

std::size_t dtype_size(TensorDtype dtype) { return dtype == TensorDtype::kFloat32 ? 4 : 8; }

FeatureType FeatureType::int64() {
  static const auto n = atomic_node(TypeTag::kInt64);
  return FeatureType(n);
}
FeatureType FeatureType::float64() {
  static const auto n = atomic_node(TypeTag::kFloat64);
  return FeatureType(n);
}
FeatureType FeatureType::boolean() {
  static const auto n = atomic_node(TypeTag::kBool);
  return FeatureType(n);
}
FeatureType FeatureType::string() {
  static const auto n = atomic_node(TypeTag::kString);
  return FeatureType(n);
}
FeatureType FeatureType::binary() {
  static const auto n = atomic_node(TypeTag::kBinary);
  return FeatureType(n);
}

FeatureType FeatureType::class_label(std::vector<std::string> names) {
  if (names.empty()) invalid("class_label needs at least one name");
  std::set<std::string_view> seen;
  for (const auto& name : names) {
    if (name.empty()) invalid("class_label names must be non-empty");
    if (!seen.insert(name).second) invalid("duplicate class_label name '" + name + "'");
  }
  auto n = std::make_shared<Node>();
  n->tag = TypeTag::kClassLabel;
  n->names = std::move(names);
  return FeatureType(std::move(n));
}

FeatureType FeatureType::sequence(FeatureType inner, std::optional<std::uint64_t> fixed_length) {
  if (inner.depth() + 1 > kMaxNestingDepth) invalid("type nesting deeper than 32");
  auto n = std::make_shared<Node>();
  n->tag = TypeTag::kSequence;
  n->depth = inner.depth() + 1;
  n->inner = std::move(inner);
  n->fixed_length = fixed_length;
  return FeatureType(std::move(n));
}

FeatureType FeatureType::translation(std::vector<std::string> languages) {
  if (languages.empty()) invalid("translation needs at least one language");
  for (size_t i = 0; i < languages.size(); ++i) {
    const auto& lang = languages[i];
    if (lang.empty()) invalid("translation languages must be non-empty");
    if (std::any_of(lang.begin(), lang.end(), [](unsigned char c) { return std::isupper(c); })) {
      invalid("translation language '" + lang + "' must be lowercase");
    }
    if (i > 0 && !(languages[i - 1] < lang)) invalid("translation languages must be unique and sorted");
  }
  auto n = std::make_shared<Node>();
  n->tag = TypeTag::kTranslation;
  n->names = std::move(languages);
  return FeatureType(std::move(n));
}

FeatureType FeatureType::tensor(TensorDtype dtype, std::vector<std::uint64_t> shape) {
  if (shape.empty()) invalid("tensor shape needs at least one dimension");
  for (auto d : shape) {
    if (d < 1) invalid("tensor dimensions must be >= 1");
  }
  auto n = std::make_shared<Node>();
  n->tag = TypeTag::kTensor;
  n->dtype = dtype;
  n->shape = std::move(shape);
  return FeatureType(std::move(n));
}

FeatureType FeatureType::record(std::vector<Field> fields) {
  std::set<std::string_view> seen;
  int depth = 1;
  for (const auto& f : fields) {
    if (f.name.empty()) invalid("record field names must be non-empty");
    if (!seen.insert(f.name).second) invalid("duplicate record field '" + f.name + "'");
    depth = std::max(depth, f.type.depth() + 1);
  }
  if (depth > kMaxNestingDepth) invalid("type nesting deeper than 32");
  auto n = std::make_shared<Node>();
  n->tag = TypeTag::kRecord;
  n->depth = depth;
  n->fields = std::move(fields);
  return FeatureType(std::move(n));
}

const FeatureType::Node& FeatureType::node() const {
  if (!node_) invalid("use of default-constructed FeatureType");
  return *node_;
}

TypeTag FeatureType::tag() const { return node().tag; }
int FeatureType::depth() const { return node().depth; }

const std::vector<std::string>& FeatureType::label_names() const {
  if (tag() != TypeTag::kClassLabel) fail(ErrorCode::kWrongType, "not a class_label");
  return node().names;
}

std::int64_t FeatureType::str2int(std::string_view name) const {
  const auto& names = label_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) fail(ErrorCode::kUnknownLabel, "unknown label '" + std::string(name) + "'");
  return it - names.begin();
}

const std::string& FeatureType::int2str(std::int64_t code) const {
  const auto& names = label_names();
  if (code < 0 || code >= static_cast<std::int64_t>(names.size())) {
    fail(ErrorCode::kUnknownLabel, "label code " + std::to_string(code) + " out of range");
  }
  return names[static_cast<size_t>(code)];
}

const FeatureType& FeatureType::inner() const {
  if (tag() != TypeTag::kSequence) fail(ErrorCode::kWrongType, "not a sequence");
  return *node().inner;
}

std::optional<std::uint64_t> FeatureType::fixed_length() const { return node().fixed_length; }

const std::vector<std::string>& FeatureType::languages() const {
  if (tag() != TypeTag::kTranslation) fail(ErrorCode::kWrongType, "not a translation");
  return node().names;
}

TensorDtype FeatureType::dtype() const { return node().dtype; }
const std::vector<std::uint64_t>& FeatureType::shape() const { return node().shape; }

std::uint64_t FeatureType::element_count() const {
  const auto& s = node().shape;
  return std::accumulate(s.begin(), s.end(), std::uint64_t{1}, std::multiplies<>());
}

const std::vector<Field>& FeatureType::fields() const { return node().fields; }

bool FeatureType::is_fixed_width() const {
  switch (tag()) {
    case TypeTag::kInt64:
    case TypeTag::kFloat64:
    case TypeTag::kBool:
    case TypeTag::kClassLabel:
    case TypeTag::kTensor: return true;
    default: return false;
  }
}

bool FeatureType::is_orderable() const {
  switch (tag()) {
    case TypeTag::kInt64:
    case TypeTag::kFloat64:
    case TypeTag::kBool:
    case TypeTag::kString:
    case TypeTag::kClassLabel: return true;
    default: return false;
  }
}

bool operator==(const FeatureType& a, const FeatureType& b) {
  if (a.node_ == b.node_) return true;
  if (!a.node_ || !b.node_) return false;
  const auto& x = *a.node_;
  const auto& y = *b.node_;
  if (x.tag != y.tag) return false;
  switch (x.tag) {
    case TypeTag::kClassLabel:
    case TypeTag::kTranslation: return x.names == y.names;
    case TypeTag::kSequence: return x.fixed_length == y.fixed_length && a.inner() == b.inner();
    case TypeTag::kTensor: return x.dtype == y.dtype && x.shape == y.shape;
    case TypeTag::kRecord: return x.fields == y.fields;
    default: return true;
  }
}

// ---------------------------------------------------------------------------
// Schema

namespace {

bool valid_column_name(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '.' || c == '-';
  });
}

}  // namespace

Schema::Schema(std::vector<Column> columns) : columns_(std::move(columns)) {
  if (columns_.empty()) invalid("schema needs at least one column");
  for (size_t i = 0; i < columns_.size(); ++i) {
    const auto& name = columns_[i].name;
    if (!valid_column_name(name)) invalid("invalid column name '" + name + "'");
    if (!by_name_.emplace(name, i).second) invalid("duplicate column name '" + name + "'");
  }
}

std::optional<std::size_t> Schema::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

std::size_t Schema::index_of(std::string_view name) const {
  auto idx = find(name);
  if (!idx) fail(ErrorCode::kUnknownColumn, "unknown column '" + std::string(name) + "'");
  return *idx;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

std::string at(const std::string& path) { return path.empty() ? std::string("<root>") : path; }

std::string join_field(const std::string& path, const std::string& name) {
  return path.empty() ? name : path + "." + name;
}

[[noreturn]] void type_error(const std::string& path, const std::string& what) {
  throw TypeError(what + " at " + at(path), path);
}

void expect_kind(bool ok, const Value& v, const char* wanted, const std::string& path) {
  if (!ok) type_error(path, std::string("expected ") + wanted + ", got " + v.kind_name());
}

}  // namespace

void validate_value(const FeatureType& type, const Value& v, const std::string& path) {
  switch (type.tag()) {
    case TypeTag::kInt64: expect_kind(v.is_int(), v, "integer", path); return;
    case TypeTag::kFloat64: expect_kind(v.is_float(), v, "float", path); return;
    case TypeTag::kBool: expect_kind(v.is_bool(), v, "bool", path); return;
    case TypeTag::kString:
      expect_kind(v.is_text(), v, "text", path);
      if (!is_valid_utf8(v.as_text())) type_error(path, "text is not valid utf-8");
      return;
    case TypeTag::kBinary: expect_kind(v.is_bytes(), v, "bytes", path); return;
    case TypeTag::kClassLabel: {
      expect_kind(v.is_int(), v, "class label code", path);
      auto n = static_cast<std::int64_t>(type.label_names().size());
      if (v.as_int() < 0 || v.as_int() >= n) {
        type_error(path, "class label code " + std::to_string(v.as_int()) + " outside [0, " + std::to_string(n) + ")");
      }
      return;
    }
    case TypeTag::kSequence: {
      expect_kind(v.is_list(), v, "list", path);
      const auto& items = v.as_list();
      if (auto fixed = type.fixed_length(); fixed && items.size() != *fixed) {
        type_error(path, "sequence length " + std::to_string(items.size()) + " != fixed length " + std::to_string(*fixed));
      }
      for (size_t i = 0; i < items.size(); ++i) {
        validate_value(type.inner(), items[i], path + "[" + std::to_string(i) + "]");
      }
      return;
    }
    case TypeTag::kTranslation: {
      expect_kind(v.is_map(), v, "map", path);
      const auto& m = v.as_map();
      const auto& langs = type.languages();
      if (m.size() != langs.size()) type_error(path, "translation keys do not match declared languages");
      for (const auto& lang : langs) {
        auto it = m.find(lang);
        if (it == m.end()) type_error(path, "missing translation language '" + lang + "'");
        const auto child = join_field(path, lang);
        expect_kind(it->second.is_text(), it->second, "text", child);
        if (!is_valid_utf8(it->second.as_text())) type_error(child, "text is not valid utf-8");
      }
      return;
    }
    case TypeTag::kTensor: {
      expect_kind(v.is_list(), v, "flat numeric list", path);
      const auto& items = v.as_list();
      if (items.size() != type.element_count()) {
        type_error(path, "tensor has " + std::to_string(items.size()) + " elements, shape needs " +
                             std::to_string(type.element_count()));
      }
      for (size_t i = 0; i < items.size(); ++i) {
        const auto child = path + "[" + std::to_string(i) + "]";
        if (type.dtype() == TensorDtype::kInt64) {
          expect_kind(items[i].is_int(), items[i], "integer", child);
        } else {
          expect_kind(items[i].is_float(), items[i], "float", child);
          if (type.dtype() == TensorDtype::kFloat32) {
            double d = items[i].as_float();
            if (!std::isnan(d) && static_cast<double>(static_cast<float>(d)) != d) {
              type_error(child, "value not representable as float32");
            }
          }
        }
      }
      return;
    }
    case TypeTag::kRecord: {
      expect_kind(v.is_map(), v, "map", path);
      const auto& m = v.as_map();
      const auto& fields = type.fields();
      if (m.size() != fields.size()) {
        for (const auto& [key, _] : m) {
          if (std::none_of(fields.begin(), fields.end(), [&](const Field& f) { return f.name == key; })) {
            type_error(join_field(path, key), "unexpected record field");
          }
        }
      }
      for (const auto& f : fields) {
        auto it = m.find(f.name);
        if (it == m.end()) type_error(join_field(path, f.name), "missing record field");
        validate_value(f.type, it->second, join_field(path, f.name));
      }
      return;
    }
  }
}

void validate_row(const Schema& schema, const Row& row) {
  if (row.size() != schema.size()) {
    throw TypeError("row has " + std::to_string(row.size()) + " cells, schema has " + std::to_string(schema.size()) +
                        " columns",
                    "");
  }
  for (size_t i = 0; i < row.size(); ++i) {
    const auto& col = schema[i];
    if (row[i].is_null()) {
      if (!col.nullable) throw TypeError("null in non-nullable column at " + col.name, col.name);
      continue;
    }
    validate_value(col.type, row[i], col.name);
  }
}

// ---------------------------------------------------------------------------
// JSON

json type_to_json(const FeatureType& type) {
  json j = json::object();
  j["tag"] = std::string(tag_name(type.tag()));
  switch (type.tag()) {
    case TypeTag::kClassLabel: j["names"] = type.label_names(); break;
    case TypeTag::kSequence:
      j["inner"] = type_to_json(type.inner());
      if (auto fixed = type.fixed_length()) j["fixed_length"] = *fixed;
      break;
    case TypeTag::kTranslation: j["languages"] = type.languages(); break;
    case TypeTag::kTensor:
      j["dtype"] = std::string(dtype_name(type.dtype()));
      j["shape"] = type.shape();
      break;
    case TypeTag::kRecord: {
      json fields = json::array();
      for (const auto& f : type.fields()) fields.push_back({{"name", f.name}, {"type", type_to_json(f.type)}});
      j["fields"] = std::move(fields);
      break;
    }
    default: break;
  }
  return j;
}

namespace {

[[noreturn]] void bad_schema(const std::string& what) { throw ParseError("schema: " + what, 0); }

const json& member(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) bad_schema(std::string("missing '") + key + "'");
  return j.at(key);
}

std::vector<std::string> string_list(const json& j, const char* key) {
  const auto& arr = member(j, key);
  if (!arr.is_array()) bad_schema(std::string("'") + key + "' must be an array");
  std::vector<std::string> out;
  for (const auto& e : arr) {
    if (!e.is_string()) bad_schema(std::string("'") + key + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

FeatureType type_from_json_depth(const json& j, int depth) {
  if (depth > kMaxNestingDepth) invalid("type nesting deeper than 32");
  const auto& tag_json = member(j, "tag");
  if (!tag_json.is_string()) bad_schema("'tag' must be a string");
  const auto tag = tag_json.get<std::string>();
  if (tag == "int64") return FeatureType::int64();
  if (tag == "float64") return FeatureType::float64();
  if (tag == "bool") return FeatureType::boolean();
  if (tag == "string") return FeatureType::string();
  if (tag == "binary") return FeatureType::binary();
  if (tag == "class_label") return FeatureType::class_label(string_list(j, "names"));
  if (tag == "translation") return FeatureType::translation(string_list(j, "languages"));
  if (tag == "sequence") {
    std::optional<std::uint64_t> fixed;
    if (j.contains("fixed_length") && !j.at("fixed_length").is_null()) {
      const auto& f = j.at("fixed_length");
      if (!f.is_number_unsigned() && !(f.is_number_integer() && f.get<std::int64_t>() >= 0)) {
        bad_schema("'fixed_length' must be a non-negative integer");
      }
      fixed = f.get<std::uint64_t>();
    }
    return FeatureType::sequence(type_from_json_depth(member(j, "inner"), depth + 1), fixed);
  }
  if (tag == "tensor") {
    const auto dtype = member(j, "dtype");
    TensorDtype dt;
    if (dtype == "int64") {
      dt = TensorDtype::kInt64;
    } else if (dtype == "float32") {
      dt = TensorDtype::kFloat32;
    } else if (dtype == "float64") {
      dt = TensorDtype::kFloat64;
    } else {
      fail(ErrorCode::kUnknownTypeTag, "unknown tensor dtype " + dtype.dump());
    }
    const auto& shape_json = member(j, "shape");
    if (!shape_json.is_array()) bad_schema("'shape' must be an array");
    std::vector<std::uint64_t> shape;
    for (const auto& d : shape_json) {
      if (!d.is_number_integer() || d.get<std::int64_t>() < 1) bad_schema("tensor dimensions must be positive integers");
      shape.push_back(d.get<std::uint64_t>());
    }
    return FeatureType::tensor(dt, std::move(shape));
  }
  if (tag == "record") {
    const auto& fields_json = member(j, "fields");
    if (!fields_json.is_array()) bad_schema("'fields' must be an array");
    std::vector<Field> fields;
    for (const auto& f : fields_json) {
      const auto& name = member(f, "name");
      if (!name.is_string()) bad_schema("field name must be a string");
      fields.push_back({name.get<std::string>(), type_from_json_depth(member(f, "type"), depth + 1)});
    }
    return FeatureType::record(std::move(fields));
  }
  fail(ErrorCode::kUnknownTypeTag, "unknown type tag '" + tag + "'");
}

std::pair<size_t, size_t> line_col(std::string_view text, size_t byte_pos) {
  size_t line = 1, col = 1;
  for (size_t i = 0; i < byte_pos && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

FeatureType type_from_json(const json& j) { return type_from_json_depth(j, 1); }

json schema_to_json_value(const Schema& schema) {
  json cols = json::array();
  for (const auto& c : schema.columns()) {
    cols.push_back({{"name", c.name}, {"nullable", c.nullable}, {"type", type_to_json(c.type)}});
  }
  return json{{"columns", std::move(cols)}};
}

std::string schema_to_json(const Schema& schema) { return schema_to_json_value(schema).dump(); }

Schema schema_from_json_value(const json& j) {
  const auto& cols = member(j, "columns");
  if (!cols.is_array()) bad_schema("'columns' must be an array");
  std::vector<Column> columns;
  for (const auto& c : cols) {
    const auto& name = member(c, "name");
    if (!name.is_string()) bad_schema("column name must be a string");
    bool nullable = false;
    if (c.contains("nullable")) {
      if (!c.at("nullable").is_boolean()) bad_schema("'nullable' must be a bool");
      nullable = c.at("nullable").get<bool>();
    }
    columns.push_back({name.get<std::string>(), type_from_json(member(c, "type")), nullable});
  }
  return Schema(std::move(columns));
}

Schema schema_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    auto [line, col] = line_col(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ParseError("schema json: " + std::string(e.what()), line, col);
  }
  return schema_from_json_value(j);
}

// ---------------------------------------------------------------------------
// Value <-> JSON

namespace {

double float_from_json(const json& j, const std::string& path) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    if (s == "Infinity") return std::numeric_limits<double>::infinity();
    if (s == "-Infinity") return -std::numeric_limits<double>::infinity();
  }
  type_error(path, "expected number, got " + std::string(j.type_name()));
}

json float_to_json(double d) {
  if (std::isnan(d)) return "NaN";
  if (std::isinf(d)) return d > 0 ? "Infinity" : "-Infinity";
  return d;
}

void flatten_tensor(const FeatureType& type, const json& j, List& out, const std::string& path) {
  if (j.is_array()) {
    for (const auto& e : j) flatten_tensor(type, e, out, path + "[" + std::to_string(out.size()) + "]");
    return;
  }
  if (type.dtype() == TensorDtype::kInt64) {
    if (!j.is_number_integer()) type_error(path, "expected integer tensor element");
    out.emplace_back(j.get<std::int64_t>());
  } else {
    out.emplace_back(float_from_json(j, path));
  }
}

json tensor_nest(const FeatureType& type, const List& flat, size_t dim, size_t& pos) {
  json arr = json::array();
  const auto& shape = type.shape();
  for (std::uint64_t i = 0; i < shape[dim]; ++i) {
    if (dim + 1 < shape.size()) {
      arr.push_back(tensor_nest(type, flat, dim + 1, pos));
    } else {
      const auto& e = flat.at(pos++);
      arr.push_back(e.is_int() ? json(e.as_int()) : float_to_json(e.as_float()));
    }
  }
  return arr;
}

}  // namespace

Value value_from_json(const FeatureType& type, const json& j, const std::string& path) {
  if (j.is_null()) return Value();
  switch (type.tag()) {
    case TypeTag::kInt64:
      if (!j.is_number_integer()) type_error(path, "expected integer, got " + std::string(j.type_name()));
      return Value(j.get<std::int64_t>());
    case TypeTag::kFloat64: return Value(float_from_json(j, path));
    case TypeTag::kBool:
      if (!j.is_boolean()) type_error(path, "expected bool, got " + std::string(j.type_name()));
      return Value(j.get<bool>());
    case TypeTag::kString:
      if (!j.is_string()) type_error(path, "expected string, got " + std::string(j.type_name()));
      return Value(j.get<std::string>());
    case TypeTag::kBinary:
      if (!j.is_string()) type_error(path, "expected base64 string, got " + std::string(j.type_name()));
      try {
        return Value(Bytes{base64_decode(j.get_ref<const std::string&>())});
      } catch (const Error&) {
        type_error(path, "invalid base64");
      }
    case TypeTag::kClassLabel:
      if (j.is_number_integer()) return Value(j.get<std::int64_t>());
      if (j.is_string()) {
        try {
          return Value(type.str2int(j.get_ref<const std::string&>()));
        } catch (const Error& e) {
          type_error(path, e.what());
        }
      }
      if (j.is_object() && j.contains("code")) return value_from_json(type, j.at("code"), path);
      type_error(path, "expected label code or name, got " + std::string(j.type_name()));
    case TypeTag::kSequence: {
      if (!j.is_array()) type_error(path, "expected array, got " + std::string(j.type_name()));
      List items;
      items.reserve(j.size());
      for (size_t i = 0; i < j.size(); ++i) {
        items.push_back(value_from_json(type.inner(), j[i], path + "[" + std::to_string(i) + "]"));
      }
      return Value(std::move(items));
    }
    case TypeTag::kTranslation: {
      if (!j.is_object()) type_error(path, "expected object, got " + std::string(j.type_name()));
      Map m;
      for (const auto& [k, v] : j.items()) {
        if (!v.is_string()) type_error(join_field(path, k), "expected string");
        m.emplace(k, Value(v.get<std::string>()));
      }
      return Value(std::move(m));
    }
    case TypeTag::kTensor: {
      if (!j.is_array()) type_error(path, "expected array, got " + std::string(j.type_name()));
      List flat;
      flat.reserve(type.element_count());
      flatten_tensor(type, j, flat, path);
      return Value(std::move(flat));
    }
    case TypeTag::kRecord: {
      if (!j.is_object()) type_error(path, "expected object, got " + std::string(j.type_name()));
      Map m;
      for (const auto& f : type.fields()) {
        auto child = join_field(path, f.name);
        if (!j.contains(f.name)) type_error(child, "missing record field");
        m.emplace(f.name, value_from_json(f.type, j.at(f.name), child));
      }
      return Value(std::move(m));
    }
  }
  type_error(path, "unsupported type");
}

json value_to_json(const FeatureType& type, const Value& v) {
  if (v.is_null()) return nullptr;
  switch (type.tag()) {
    case TypeTag::kInt64: return v.as_int();
    case TypeTag::kFloat64: return float_to_json(v.as_float());
    case TypeTag::kBool: return v.as_bool();
    case TypeTag::kString: return v.as_text();
    case TypeTag::kBinary: return base64_encode(v.as_bytes().data);
    case TypeTag::kClassLabel: return json{{"code", v.as_int()}, {"label", type.int2str(v.as_int())}};
    case TypeTag::kSequence: {
      json arr = json::array();
      for (const auto& e : v.as_list()) arr.push_back(value_to_json(type.inner(), e));
      return arr;
    }
    case TypeTag::kTranslation: {
      json obj = json::object();
      for (const auto& [k, e] : v.as_map()) obj[k] = e.as_text();
      return obj;
    }
    case TypeTag::kTensor: {
      size_t pos = 0;
      return tensor_nest(type, v.as_list(), 0, pos);
    }
    case TypeTag::kRecord: {
      json obj = json::object();
      for (const auto& f : type.fields()) obj[f.name] = value_to_json(f.type, v.as_map().at(f.name));
      return obj;
    }
  }
  return nullptr;
}

json row_to_json(const Schema& schema, const Row& row) {
  json obj = json::object();
  for (size_t i = 0; i < schema.size(); ++i) obj[schema[i].name] = value_to_json(schema[i].type, row.at(i));
  return obj;
}

json plain_to_json(const Value& v) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::monostate>) {
          return nullptr;
        } else if constexpr (std::is_same_v<T, double>) {
          return float_to_json(x);
        } else if constexpr (std::is_same_v<T, Bytes>) {
          return base64_encode(x.data);
        } else if constexpr (std::is_same_v<T, List>) {
          json arr = json::array();
          for (const auto& e : x) arr.push_back(plain_to_json(e));
          return arr;
        } else if constexpr (std::is_same_v<T, Map>) {
          json obj = json::object();
          for (const auto& [k, e] : x) obj[k] = plain_to_json(e);
          return obj;
        } else {
          return x;
        }
      },
      v.storage());
}

// ---------------------------------------------------------------------------
// Text helpers

bool is_valid_utf8(std::string_view s) {
  size_t i = 0;
  const size_t n = s.size();
  while (i < n) {
    auto c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
      ++i;
      continue;
    }
    size_t len;
    std::uint32_t cp;
    if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (size_t k = 1; k < len; ++k) {
      auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates and out-of-range code points.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return false;
    if (cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += len;
  }
  return true;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) fail(ErrorCode::kInvalidArgument, "base64 length must be a multiple of 4");
  std::string out(3 * text.size() / 4, '\0');
  int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) fail(ErrorCode::kInvalidArgument, "invalid base64");
  size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<size_t>(n) - pad);
  return out;
}

}  // namespace dataforge

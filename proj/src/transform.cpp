#include "dataforge/transform.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "dataforge/error.hpp"
#include "dataforge/random.hpp"
#include "dataforge/text.hpp"

namespace dataforge {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMap: return "map";
    case OpKind::kFilter: return "filter";
    case OpKind::kSort: return "sort";
    case OpKind::kShuffle: return "shuffle";
    case OpKind::kSelect: return "select";
    case OpKind::kTrainTestSplit: return "train_test_split";
  }
  return "?";
}

Fingerprint chain_fingerprint(const Fingerprint& parent, const TransformSpec& spec) {
  Sha256 h;
  h.update_framed(parent.hex());
  h.update_framed(op_kind_name(spec.op_kind));
  h.update_framed(spec.transform_id);
  h.update_framed(spec.transform_version);
  h.update_framed(spec.params.dump());
  h.update_framed(spec.batched ? "1" : "0");
  h.update_u64(spec.batch_size);
  return Fingerprint(h.finish());
}

std::vector<std::uint64_t> index_range(std::uint64_t begin, std::uint64_t end) {
  std::vector<std::uint64_t> out;
  for (auto i = begin; i < end; ++i) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// Registry and built-ins

namespace {

std::string param_string(const json& params, const char* key) {
  if (!params.is_object() || !params.contains(key) || !params.at(key).is_string()) {
    fail(ErrorCode::kInvalidArgument, std::string("missing string parameter '") + key + "'");
  }
  return params.at(key).get<std::string>();
}

std::string param_string_or(const json& params, const char* key, const std::string& fallback) {
  if (params.is_object() && params.contains(key)) return param_string(params, key);
  return fallback;
}

std::int64_t param_int(const json& params, const char* key, std::optional<std::int64_t> fallback = std::nullopt) {
  if (params.is_object() && params.contains(key)) {
    if (!params.at(key).is_number_integer()) fail(ErrorCode::kInvalidArgument, std::string("'") + key + "' must be an integer");
    return params.at(key).get<std::int64_t>();
  }
  if (fallback) return *fallback;
  fail(ErrorCode::kInvalidArgument, std::string("missing integer parameter '") + key + "'");
}

std::size_t string_column(const Schema& s, const std::string& name) {
  auto idx = s.index_of(name);
  if (s[idx].type.tag() != TypeTag::kString) fail(ErrorCode::kWrongType, "column '" + name + "' is not a string column");
  return idx;
}

Schema with_column(const Schema& in, Column extra) {
  if (in.find(extra.name)) fail(ErrorCode::kInvalidArgument, "output column '" + extra.name + "' already exists");
  auto cols = in.columns();
  cols.push_back(std::move(extra));
  return Schema(std::move(cols));
}

/// Applies fn to every row independently.
BatchFn per_row(std::function<Row(const Row&)> fn) {
  return [fn = std::move(fn)](std::span<const Row> rows) {
    std::vector<Row> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(fn(r));
    return out;
  };
}

TransformDef identity_def() {
  TransformDef d{"identity", "1.0.0", TransformDef::Kind::kMap, {}, {}, {}};
  d.output_schema = [](const Schema& in, const json&) { return in; };
  d.make_map = [](const Schema&, const json&) -> BatchFn {
    return [](std::span<const Row> rows) { return std::vector<Row>(rows.begin(), rows.end()); };
  };
  return d;
}

TransformDef lowercase_def() {
  TransformDef d{"lowercase", "1.0.0", TransformDef::Kind::kMap, {}, {}, {}};
  d.output_schema = [](const Schema& in, const json& p) {
    string_column(in, param_string(p, "column"));
    return in;
  };
  d.make_map = [](const Schema& in, const json& p) {
    auto col = string_column(in, param_string(p, "column"));
    return per_row([col](const Row& r) {
      Row out = r;
      if (!out[col].is_null()) out[col] = Value(text::to_lower(out[col].as_text()));
      return out;
    });
  };
  return d;
}

TransformDef concat_fields_def() {
  TransformDef d{"concat_fields", "1.0.0", TransformDef::Kind::kMap, {}, {}, {}};
  auto columns_of = [](const Schema& in, const json& p) {
    if (!p.contains("columns") || !p.at("columns").is_array()) {
      fail(ErrorCode::kInvalidArgument, "concat_fields needs a 'columns' array");
    }
    std::vector<std::size_t> idx;
    for (const auto& c : p.at("columns")) idx.push_back(in.index_of(c.get<std::string>()));
    return idx;
  };
  d.output_schema = [columns_of](const Schema& in, const json& p) {
    columns_of(in, p);
    return with_column(in, {param_string_or(p, "output", "concat"), FeatureType::string(), false});
  };
  d.make_map = [columns_of](const Schema& in, const json& p) {
    auto idx = columns_of(in, p);
    auto sep = param_string_or(p, "separator", " ");
    return per_row([idx, sep](const Row& r) {
      std::string joined;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (k > 0) joined += sep;
        const auto& v = r[idx[k]];
        if (v.is_text()) {
          joined += v.as_text();
        } else if (!v.is_null()) {
          joined += plain_to_json(v).dump();
        }
      }
      Row out = r;
      out.emplace_back(std::move(joined));
      return out;
    });
  };
  return d;
}

TransformDef whitespace_tokenize_def() {
  TransformDef d{"whitespace_tokenize", "1.0.0", TransformDef::Kind::kMap, {}, {}, {}};
  d.output_schema = [](const Schema& in, const json& p) {
    auto column = param_string(p, "column");
    string_column(in, column);
    return with_column(in, {param_string_or(p, "output", column + "_tokens"),
                            FeatureType::sequence(FeatureType::string()), true});
  };
  d.make_map = [](const Schema& in, const json& p) {
    auto col = string_column(in, param_string(p, "column"));
    return per_row([col](const Row& r) {
      Row out = r;
      if (r[col].is_null()) {
        out.emplace_back();
      } else {
        List tokens;
        for (auto& t : text::split_whitespace(r[col].as_text())) tokens.emplace_back(std::move(t));
        out.emplace_back(std::move(tokens));
      }
      return out;
    });
  };
  return d;
}

TransformDef length_def() {
  TransformDef d{"length", "1.0.0", TransformDef::Kind::kMap, {}, {}, {}};
  auto check = [](const Schema& in, const std::string& column) {
    auto idx = in.index_of(column);
    switch (in[idx].type.tag()) {
      case TypeTag::kString:
      case TypeTag::kBinary:
      case TypeTag::kSequence:
      case TypeTag::kTranslation:
      case TypeTag::kRecord: return idx;
      default: fail(ErrorCode::kWrongType, "length() does not apply to column '" + column + "'");
    }
  };
  d.output_schema = [check](const Schema& in, const json& p) {
    auto column = param_string(p, "column");
    check(in, column);
    return with_column(in, {param_string_or(p, "output", column + "_length"), FeatureType::int64(), true});
  };
  d.make_map = [check](const Schema& in, const json& p) {
    auto col = check(in, param_string(p, "column"));
    return per_row([col](const Row& r) {
      Row out = r;
      const auto& v = r[col];
      if (v.is_null()) {
        out.emplace_back();
      } else if (v.is_text()) {
        out.emplace_back(static_cast<std::int64_t>(text::codepoint_count(v.as_text())));
      } else if (v.is_bytes()) {
        out.emplace_back(static_cast<std::int64_t>(v.as_bytes().data.size()));
      } else if (v.is_list()) {
        out.emplace_back(static_cast<std::int64_t>(v.as_list().size()));
      } else {
        out.emplace_back(static_cast<std::int64_t>(v.as_map().size()));
      }
      return out;
    });
  };
  return d;
}

TransformDef not_null_def() {
  TransformDef d{"not_null", "1.0.0", TransformDef::Kind::kPredicate, {}, {}, {}};
  d.make_predicate = [](const Schema& in, const json& p) -> PredicateFn {
    auto col = in.index_of(param_string(p, "column"));
    return [col](const Row& r) { return !r[col].is_null(); };
  };
  return d;
}

TransformDef int_mod_def() {
  TransformDef d{"int_mod", "1.0.0", TransformDef::Kind::kPredicate, {}, {}, {}};
  d.make_predicate = [](const Schema& in, const json& p) -> PredicateFn {
    auto column = param_string(p, "column");
    auto col = in.index_of(column);
    auto tag = in[col].type.tag();
    if (tag != TypeTag::kInt64 && tag != TypeTag::kClassLabel) {
      fail(ErrorCode::kWrongType, "int_mod needs an integer column, '" + column + "' is not");
    }
    auto divisor = param_int(p, "divisor");
    auto remainder = param_int(p, "remainder", 0);
    if (divisor == 0) fail(ErrorCode::kInvalidArgument, "int_mod divisor must be non-zero");
    return [col, divisor, remainder](const Row& r) {
      if (r[col].is_null()) return false;
      auto m = r[col].as_int() % divisor;
      if (m < 0) m += divisor < 0 ? -divisor : divisor;
      return m == remainder;
    };
  };
  return d;
}

TransformDef contains_def() {
  TransformDef d{"contains", "1.0.0", TransformDef::Kind::kPredicate, {}, {}, {}};
  d.make_predicate = [](const Schema& in, const json& p) -> PredicateFn {
    auto col = string_column(in, param_string(p, "column"));
    auto needle = param_string(p, "substring");
    return [col, needle](const Row& r) { return r[col].is_text() && r[col].as_text().find(needle) != std::string::npos; };
  };
  return d;
}

}  // namespace

TransformRegistry TransformRegistry::with_builtins() {
  TransformRegistry r;
  r.add(identity_def());
  r.add(lowercase_def());
  r.add(concat_fields_def());
  r.add(whitespace_tokenize_def());
  r.add(length_def());
  r.add(not_null_def());
  r.add(int_mod_def());
  r.add(contains_def());
  return r;
}

void TransformRegistry::add(TransformDef def) {
  if (def.id.empty()) fail(ErrorCode::kInvalidArgument, "transform id must be non-empty");
  if (def.kind == TransformDef::Kind::kMap && !def.make_map) fail(ErrorCode::kInvalidArgument, "map without make_map");
  if (def.kind == TransformDef::Kind::kPredicate && !def.make_predicate) {
    fail(ErrorCode::kInvalidArgument, "predicate without make_predicate");
  }
  defs_.insert_or_assign(def.id, std::move(def));
}

const TransformDef& TransformRegistry::get(const std::string& id) const {
  auto it = defs_.find(id);
  if (it == defs_.end()) fail(ErrorCode::kUnknownTransform, "unknown transform '" + id + "'");
  return it->second;
}

std::vector<std::string> TransformRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : defs_) out.push_back(id);
  return out;
}

TransformSpec TransformRegistry::spec(OpKind kind, const std::string& id, json params, bool batched,
                                      std::uint64_t batch_size) const {
  return TransformSpec{kind, id, get(id).version, std::move(params), batched, batch_size};
}

// ---------------------------------------------------------------------------
// Transformer

Transformer::Transformer(fs::path cache_dir, const TransformRegistry& registry)
    : cache_dir_(std::move(cache_dir)), registry_(registry) {
  fs::create_directories(cache_dir_ / "transforms");
}

fs::path Transformer::cache_path(const Fingerprint& fp) const { return cache_dir_ / "transforms" / (fp.hex() + ".dset"); }

std::optional<Table> Transformer::cached(const Fingerprint& fp, const Schema& expected) const {
  auto path = cache_path(fp);
  if (!fs::exists(path)) return std::nullopt;
  try {
    auto t = open_table(path, {.verify = true});
    if (!(t.schema() == expected)) return std::nullopt;
    cache_hits_.fetch_add(1);
    return t;
  } catch (const Error&) {
    return std::nullopt;
  }
}

namespace {

fs::path shard_dir_for(const fs::path& cache_dir, const Fingerprint& fp) {
  static std::atomic<std::uint64_t> counter{0};
  return cache_dir / "transforms" / "tmp" /
         (fp.hex() + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
}

[[noreturn]] void rethrow_as_transform_error(const std::string& id, std::uint64_t lo, std::uint64_t hi) {
  std::string what = "unknown exception";
  try {
    throw;
  } catch (const std::exception& e) {
    what = e.what();
  } catch (...) {
  }
  fail(ErrorCode::kTransformError,
       "transform '" + id + "' failed on rows [" + std::to_string(lo) + ", " + std::to_string(hi) + "): " + what);
}

}  // namespace

Table Transformer::run_sharded(const Table& input, const TransformSpec& spec, const Schema& out_schema, unsigned workers,
                               const Fingerprint& fp) {
  const auto& def = registry_.get(spec.transform_id);
  const bool is_filter = spec.op_kind == OpKind::kFilter;
  if (is_filter != (def.kind == TransformDef::Kind::kPredicate)) {
    fail(ErrorCode::kInvalidArgument, "transform '" + spec.transform_id + "' has the wrong kind for " +
                                          std::string(op_kind_name(spec.op_kind)));
  }
  BatchFn map_fn;
  PredicateFn pred_fn;
  if (is_filter) {
    pred_fn = def.make_predicate(input.schema(), spec.params);
  } else {
    map_fn = def.make_map(input.schema(), spec.params);
  }

  const std::uint64_t n = input.num_rows();
  const std::uint64_t unit = std::max<std::uint64_t>(spec.batch_size, 1);
  const std::uint64_t units = (n + unit - 1) / unit;
  const std::uint64_t shards = std::max<std::uint64_t>(1, std::min<std::uint64_t>(std::max(workers, 1U), units));
  const auto shard_dir = shard_dir_for(cache_dir_, fp);
  fs::create_directories(shard_dir);

  std::vector<std::optional<Table>> parts(shards);
  std::vector<std::exception_ptr> errors(shards);

  auto run_shard = [&](std::uint64_t k) {
    try {
      const std::uint64_t lo_unit = k * units / shards;
      const std::uint64_t hi_unit = (k + 1) * units / shards;
      TableWriter writer(shard_dir / ("shard-" + std::to_string(k) + ".dset"), out_schema);
      for (std::uint64_t u = lo_unit; u < hi_unit; ++u) {
        const std::uint64_t lo = u * unit;
        const std::uint64_t hi = std::min(n, lo + unit);
        auto rows = input.slice(lo, hi);
        std::vector<Row> out;
        try {
          if (is_filter) {
            for (auto& r : rows) {
              invocations_.fetch_add(1, std::memory_order_relaxed);
              if (pred_fn(r)) out.push_back(std::move(r));
            }
          } else if (spec.batched) {
            invocations_.fetch_add(1, std::memory_order_relaxed);
            out = map_fn(rows);
          } else {
            out.reserve(rows.size());
            for (const auto& r : rows) {
              invocations_.fetch_add(1, std::memory_order_relaxed);
              auto produced = map_fn(std::span<const Row>(&r, 1));
              if (produced.size() != 1) {
                fail(ErrorCode::kTransformError, "row-wise map must return exactly one row");
              }
              out.push_back(std::move(produced[0]));
            }
          }
        } catch (...) {
          rethrow_as_transform_error(spec.transform_id, lo, hi);
        }
        for (const auto& r : out) {
          try {
            writer.append(r);
          } catch (const TypeError& e) {
            fail(ErrorCode::kSchemaMismatch, "transform '" + spec.transform_id + "' output on rows [" +
                                                 std::to_string(lo) + ", " + std::to_string(hi) +
                                                 ") does not match the output schema: " + e.what());
          }
        }
      }
      parts[k] = writer.finish();
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };

  if (shards == 1) {
    run_shard(0);
  } else {
    std::vector<std::thread> threads;
    for (std::uint64_t k = 0; k < shards; ++k) threads.emplace_back(run_shard, k);
    for (auto& t : threads) t.join();
  }

  auto cleanup = [&] {
    std::error_code ec;
    fs::remove_all(shard_dir, ec);
  };
  for (auto& e : errors) {
    if (e) {
      parts.clear();
      cleanup();
      std::rethrow_exception(e);
    }
  }

  // Re-batch the shard outputs so the file is independent of the worker count.
  std::vector<Table> tables;
  for (auto& p : parts) tables.push_back(std::move(*p));
  auto merged = concat_tables(tables);
  TableWriter final_writer(cache_path(fp), out_schema);
  merged.for_each_row([&](std::uint64_t, const Row& r) { final_writer.append(r); });
  auto result = final_writer.finish();
  tables.clear();
  merged = Table();
  cleanup();
  return result;
}

Table Transformer::map(const Table& input, const TransformSpec& spec, const Schema& out_schema, unsigned workers) {
  if (spec.op_kind != OpKind::kMap) fail(ErrorCode::kInvalidArgument, "map() needs a map spec");
  auto fp = chain_fingerprint(input.fingerprint(), spec);
  if (auto hit = cached(fp, out_schema)) return *hit;
  return run_sharded(input, spec, out_schema, workers, fp);
}

Table Transformer::map(const Table& input, const TransformSpec& spec, unsigned workers) {
  const auto& def = registry_.get(spec.transform_id);
  if (!def.output_schema) {
    fail(ErrorCode::kInvalidArgument, "transform '" + spec.transform_id + "' needs an explicit output schema");
  }
  return map(input, spec, def.output_schema(input.schema(), spec.params), workers);
}

Table Transformer::filter(const Table& input, const TransformSpec& spec, unsigned workers) {
  if (spec.op_kind != OpKind::kFilter) fail(ErrorCode::kInvalidArgument, "filter() needs a filter spec");
  auto fp = chain_fingerprint(input.fingerprint(), spec);
  if (auto hit = cached(fp, input.schema())) return *hit;
  return run_sharded(input, spec, input.schema(), workers, fp);
}

Table Transformer::gather(const Table& input, std::span<const std::uint64_t> indices, const Fingerprint& fp) {
  if (auto hit = cached(fp, input.schema())) return *hit;
  const auto n = input.num_rows();
  for (auto i : indices) {
    if (i >= n) fail(ErrorCode::kOutOfBounds, "index " + std::to_string(i) + " out of range [0, " + std::to_string(n) + ")");
  }
  TableWriter writer(cache_path(fp), input.schema());
  for (auto i : indices) writer.append(input.row(i));
  return writer.finish();
}

Table Transformer::select(const Table& input, std::span<const std::uint64_t> indices) {
  TransformSpec spec{OpKind::kSelect, "select", "1.0.0", json{{"indices", indices}}, false, kDefaultMapBatchSize};
  return gather(input, indices, chain_fingerprint(input.fingerprint(), spec));
}

namespace {

// Rank classes: ascending puts null < number < NaN, descending number < NaN < null.
int order_class(const Value& v, bool descending) {
  if (v.is_null()) return descending ? 2 : 0;
  if (v.is_float() && std::isnan(v.as_float())) return descending ? 1 : 2;
  return descending ? 0 : 1;
}

bool value_less(const Value& a, const Value& b) {
  if (a.is_int()) return a.as_int() < b.as_int();
  if (a.is_float()) return a.as_float() < b.as_float();
  if (a.is_bool()) return !a.as_bool() && b.as_bool();
  return a.as_text() < b.as_text();
}

}  // namespace

Table Transformer::sort(const Table& input, const std::string& column, bool descending) {
  auto col = input.schema().index_of(column);
  if (!input.schema()[col].type.is_orderable()) {
    fail(ErrorCode::kUnorderableType, "column '" + column + "' is not orderable");
  }
  TransformSpec spec{OpKind::kSort, "sort", "1.0.0", json{{"column", column}, {"descending", descending}}, false,
                     kDefaultMapBatchSize};
  auto fp = chain_fingerprint(input.fingerprint(), spec);
  if (auto hit = cached(fp, input.schema())) return *hit;

  std::vector<Value> keys;
  keys.reserve(input.num_rows());
  auto reader = input.column(column);
  while (auto v = reader.next()) keys.push_back(std::move(*v));
  std::vector<std::uint64_t> order = index_range(0, keys.size());
  std::stable_sort(order.begin(), order.end(), [&](std::uint64_t x, std::uint64_t y) {
    const auto& a = keys[x];
    const auto& b = keys[y];
    int ca = order_class(a, descending), cb = order_class(b, descending);
    if (ca != cb) return ca < cb;
    if (a.is_null() || (a.is_float() && std::isnan(a.as_float()))) return false;
    return descending ? value_less(b, a) : value_less(a, b);
  });
  return gather(input, order, fp);
}

Table Transformer::shuffle(const Table& input, std::uint64_t seed) {
  TransformSpec spec{OpKind::kShuffle, "shuffle", "1.0.0", json{{"seed", seed}}, false, kDefaultMapBatchSize};
  auto perm = shuffled_indices(input.num_rows(), seed);
  return gather(input, perm, chain_fingerprint(input.fingerprint(), spec));
}

SplitResult Transformer::train_test_split(const Table& input, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "test_fraction must lie strictly between 0 and 1");
  }
  const auto n = input.num_rows();
  if (n < 2) fail(ErrorCode::kTooFewRows, "train_test_split needs at least 2 rows");
  auto test_n = static_cast<std::uint64_t>(std::llround(test_fraction * static_cast<double>(n)));
  test_n = std::clamp<std::uint64_t>(test_n, 1, n - 1);
  auto perm = shuffled_indices(n, seed);
  std::span<const std::uint64_t> all(perm);

  auto part_spec = [&](const char* part) {
    return TransformSpec{OpKind::kTrainTestSplit, "train_test_split", "1.0.0",
                         json{{"part", part}, {"seed", seed}, {"test_fraction", test_fraction}}, false,
                         kDefaultMapBatchSize};
  };
  SplitResult out;
  out.test = gather(input, all.first(test_n), chain_fingerprint(input.fingerprint(), part_spec("test")));
  out.train = gather(input, all.subspan(test_n), chain_fingerprint(input.fingerprint(), part_spec("train")));
  return out;
}

}  // namespace dataforge

#include "dataforge/stream.hpp"

#include <deque>

#include "dataforge/builder.hpp"
#include "dataforge/error.hpp"
#include "dataforge/random.hpp"

namespace dataforge {

namespace fs = std::filesystem;
using nlohmann::json;

StreamPipeline& StreamPipeline::map(TransformSpec spec, std::optional<Schema> out_schema) {
  StreamOp op;
  op.kind = StreamOp::Kind::kMap;
  op.spec = std::move(spec);
  op.out_schema = std::move(out_schema);
  ops.push_back(std::move(op));
  return *this;
}

StreamPipeline& StreamPipeline::filter(TransformSpec spec) {
  StreamOp op;
  op.kind = StreamOp::Kind::kFilter;
  op.spec = std::move(spec);
  ops.push_back(std::move(op));
  return *this;
}

StreamPipeline& StreamPipeline::shuffle(std::uint64_t buffer_size, std::uint64_t seed) {
  StreamOp op;
  op.kind = StreamOp::Kind::kShuffle;
  op.n = buffer_size;
  op.seed = seed;
  ops.push_back(op);
  return *this;
}

StreamPipeline& StreamPipeline::take(std::uint64_t n) {
  StreamOp op;
  op.kind = StreamOp::Kind::kTake;
  op.n = n;
  ops.push_back(op);
  return *this;
}

StreamPipeline& StreamPipeline::skip(std::uint64_t n) {
  StreamOp op;
  op.kind = StreamOp::Kind::kSkip;
  op.n = n;
  ops.push_back(op);
  return *this;
}

namespace {

class SourceStream final : public RowStream {
 public:
  explicit SourceStream(StreamSource source) : source_(std::move(source)) {
    if (source_.shards.empty()) fail(ErrorCode::kInvalidArgument, "stream source needs at least one shard");
  }

  std::optional<Row> next() override {
    if (done_) return std::nullopt;
    try {
      for (;;) {
        if (!reader_) {
          if (shard_ == source_.shards.size()) {
            done_ = true;
            return std::nullopt;
          }
          const auto& loc = source_.shards[shard_];
          auto src = is_remote(loc) ? open_http_source(loc, source_.read_buffer_bytes)
                                    : open_file_source(resolve_local(loc, source_.base_dir));
          if (source_.options.gzip || looks_gzipped(loc)) src = inflate_source(std::move(src));
          reader_ = std::make_unique<RowReader>(std::move(src), source_.format, source_.options, source_.field_map,
                                                source_.schema, "shard " + std::to_string(shard_) + " (" + loc + ")");
        }
        if (auto row = reader_->next()) return row;
        reader_.reset();
        ++shard_;
      }
    } catch (...) {
      done_ = true;
      reader_.reset();
      throw;
    }
  }

  const Schema& schema() const override { return source_.schema; }

 private:
  StreamSource source_;
  std::size_t shard_ = 0;
  std::unique_ptr<RowReader> reader_;
  bool done_ = false;
};

class MapStream final : public RowStream {
 public:
  MapStream(std::unique_ptr<RowStream> up, BatchFn fn, Schema out, const TransformSpec& spec)
      : up_(std::move(up)), fn_(std::move(fn)), out_(std::move(out)), id_(spec.transform_id),
        batched_(spec.batched), batch_size_(std::max<std::uint64_t>(spec.batch_size, 1)) {}

  std::optional<Row> next() override {
    while (pending_.empty()) {
      if (upstream_done_) return std::nullopt;
      std::vector<Row> batch;
      const std::uint64_t want = batched_ ? batch_size_ : 1;
      while (batch.size() < want) {
        auto r = up_->next();
        if (!r) {
          upstream_done_ = true;
          break;
        }
        batch.push_back(std::move(*r));
      }
      if (batch.empty()) return std::nullopt;
      const auto lo = consumed_;
      consumed_ += batch.size();
      std::vector<Row> out;
      try {
        out = fn_(batch);
      } catch (const std::exception& e) {
        fail(ErrorCode::kTransformError, "transform '" + id_ + "' failed on stream rows [" + std::to_string(lo) +
                                             ", " + std::to_string(consumed_) + "): " + e.what());
      }
      if (!batched_ && out.size() != 1) fail(ErrorCode::kTransformError, "row-wise map must return exactly one row");
      for (auto& r : out) {
        try {
          validate_row(out_, r);
        } catch (const TypeError& e) {
          fail(ErrorCode::kSchemaMismatch, "transform '" + id_ + "' output does not match the output schema: " + e.what());
        }
        pending_.push_back(std::move(r));
      }
    }
    Row r = std::move(pending_.front());
    pending_.pop_front();
    return r;
  }

  const Schema& schema() const override { return out_; }

 private:
  std::unique_ptr<RowStream> up_;
  BatchFn fn_;
  Schema out_;
  std::string id_;
  bool batched_;
  std::uint64_t batch_size_;
  std::deque<Row> pending_;
  std::uint64_t consumed_ = 0;
  bool upstream_done_ = false;
};

class FilterStream final : public RowStream {
 public:
  FilterStream(std::unique_ptr<RowStream> up, PredicateFn pred, std::string id)
      : up_(std::move(up)), pred_(std::move(pred)), id_(std::move(id)) {}

  std::optional<Row> next() override {
    while (auto r = up_->next()) {
      bool keep = false;
      try {
        keep = pred_(*r);
      } catch (const std::exception& e) {
        fail(ErrorCode::kTransformError,
             "predicate '" + id_ + "' failed on stream row " + std::to_string(seen_) + ": " + e.what());
      }
      ++seen_;
      if (keep) return r;
    }
    return std::nullopt;
  }

  const Schema& schema() const override { return up_->schema(); }

 private:
  std::unique_ptr<RowStream> up_;
  PredicateFn pred_;
  std::string id_;
  std::uint64_t seen_ = 0;
};

class TakeStream final : public RowStream {
 public:
  TakeStream(std::unique_ptr<RowStream> up, std::uint64_t n) : up_(std::move(up)), left_(n) {}
  std::optional<Row> next() override {
    if (left_ == 0) return std::nullopt;
    auto r = up_->next();
    left_ = r ? left_ - 1 : 0;
    return r;
  }
  const Schema& schema() const override { return up_->schema(); }

 private:
  std::unique_ptr<RowStream> up_;
  std::uint64_t left_;
};

class SkipStream final : public RowStream {
 public:
  SkipStream(std::unique_ptr<RowStream> up, std::uint64_t n) : up_(std::move(up)), skip_(n) {}
  std::optional<Row> next() override {
    for (; skip_ > 0; --skip_) {
      if (!up_->next()) {
        skip_ = 0;
        return std::nullopt;
      }
    }
    return up_->next();
  }
  const Schema& schema() const override { return up_->schema(); }

 private:
  std::unique_ptr<RowStream> up_;
  std::uint64_t skip_;
};

class ShuffleStream final : public RowStream {
 public:
  ShuffleStream(std::unique_ptr<RowStream> up, std::uint64_t size, std::uint64_t seed)
      : up_(std::move(up)), size_(size), rng_(seed) {
    if (size_ == 0) fail(ErrorCode::kInvalidArgument, "shuffle buffer size must be at least 1");
  }

  std::optional<Row> next() override {
    if (!filled_) {
      filled_ = true;
      while (buffer_.size() < size_) {
        auto r = up_->next();
        if (!r) {
          dry_ = true;
          break;
        }
        buffer_.push_back(std::move(*r));
      }
    }
    if (buffer_.empty()) return std::nullopt;
    const auto j = rng_.next_below(buffer_.size());
    Row out = std::move(buffer_[j]);
    std::optional<Row> refill;
    if (!dry_) {
      refill = up_->next();
      dry_ = !refill;
    }
    if (refill) {
      buffer_[j] = std::move(*refill);
    } else {
      if (j + 1 != buffer_.size()) buffer_[j] = std::move(buffer_.back());
      buffer_.pop_back();
    }
    return out;
  }

  const Schema& schema() const override { return up_->schema(); }

 private:
  std::unique_ptr<RowStream> up_;
  std::uint64_t size_;
  SplitMix64 rng_;
  std::vector<Row> buffer_;
  bool filled_ = false;
  bool dry_ = false;
};

Schema map_output_schema(const StreamOp& op, const TransformRegistry& registry, const Schema& in) {
  if (op.out_schema) return *op.out_schema;
  const auto& def = registry.get(op.spec.transform_id);
  if (!def.output_schema) {
    fail(ErrorCode::kInvalidArgument, "transform '" + op.spec.transform_id + "' needs an explicit output schema");
  }
  return def.output_schema(in, op.spec.params);
}

}  // namespace

std::unique_ptr<RowStream> open_stream(const StreamSource& source) { return std::make_unique<SourceStream>(source); }

std::unique_ptr<RowStream> buffered_shuffle(std::unique_ptr<RowStream> upstream, std::uint64_t buffer_size,
                                            std::uint64_t seed) {
  return std::make_unique<ShuffleStream>(std::move(upstream), buffer_size, seed);
}

std::unique_ptr<RowStream> stream_rows(const StreamPipeline& p, const TransformRegistry& registry) {
  std::unique_ptr<RowStream> s = open_stream(p.source);
  for (const auto& op : p.ops) {
    switch (op.kind) {
      case StreamOp::Kind::kMap: {
        const auto& def = registry.get(op.spec.transform_id);
        if (def.kind != TransformDef::Kind::kMap) {
          fail(ErrorCode::kInvalidArgument, "'" + op.spec.transform_id + "' is not a map transform");
        }
        auto out = map_output_schema(op, registry, s->schema());
        auto fn = def.make_map(s->schema(), op.spec.params);
        s = std::make_unique<MapStream>(std::move(s), std::move(fn), std::move(out), op.spec);
        break;
      }
      case StreamOp::Kind::kFilter: {
        const auto& def = registry.get(op.spec.transform_id);
        if (def.kind != TransformDef::Kind::kPredicate) {
          fail(ErrorCode::kInvalidArgument, "'" + op.spec.transform_id + "' is not a predicate");
        }
        auto pred = def.make_predicate(s->schema(), op.spec.params);
        s = std::make_unique<FilterStream>(std::move(s), std::move(pred), op.spec.transform_id);
        break;
      }
      case StreamOp::Kind::kShuffle: s = buffered_shuffle(std::move(s), op.n, op.seed); break;
      case StreamOp::Kind::kTake: s = std::make_unique<TakeStream>(std::move(s), op.n); break;
      case StreamOp::Kind::kSkip: s = std::make_unique<SkipStream>(std::move(s), op.n); break;
    }
  }
  return s;
}

std::vector<Row> eager_rows(const StreamPipeline& p, const TransformRegistry& registry, const fs::path& cache_dir) {
  BuilderDef def;
  def.id = "stream-eager";
  def.version = "0.0.0";
  def.format = p.source.format;
  def.options = p.source.options;
  def.schema = p.source.schema;
  def.field_map = p.source.field_map;
  def.base_dir = p.source.base_dir;
  for (const auto& shard : p.source.shards) def.sources["all"].push_back(SourceRef{shard, std::nullopt});
  auto dd = build_dataset(def, cache_dir);
  Table t = dd.split("all");

  Transformer tf(cache_dir, registry);
  for (const auto& op : p.ops) {
    const auto n = t.num_rows();
    switch (op.kind) {
      case StreamOp::Kind::kMap: t = tf.map(t, op.spec, map_output_schema(op, registry, t.schema())); break;
      case StreamOp::Kind::kFilter: t = tf.filter(t, op.spec); break;
      case StreamOp::Kind::kTake: t = tf.select(t, index_range(0, std::min(op.n, n))); break;
      case StreamOp::Kind::kSkip: t = tf.select(t, index_range(std::min(op.n, n), n)); break;
      case StreamOp::Kind::kShuffle:
        fail(ErrorCode::kInvalidArgument, "buffered shuffle has no eager counterpart");
    }
  }
  return t.read_all();
}

bool stream_eager_equivalence(const StreamPipeline& p, const TransformRegistry& registry, const fs::path& cache_dir) {
  auto expected = eager_rows(p, registry, cache_dir);
  auto s = stream_rows(p, registry);
  std::size_t i = 0;
  while (auto r = s->next()) {
    if (i >= expected.size() || !(*r == expected[i])) return false;
    ++i;
  }
  return i == expected.size();
}

StreamPipeline pipeline_from_json(const json& j, const TransformRegistry& registry, const fs::path& base_dir) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "stream manifest must be a JSON object");
  StreamPipeline p;
  auto& src = p.source;
  src.base_dir = base_dir;
  if (!j.contains("shards") || !j.at("shards").is_array()) fail(ErrorCode::kInvalidArgument, "manifest needs 'shards'");
  src.shards = j.at("shards").get<std::vector<std::string>>();
  src.format = format_from_name(j.value("format", std::string("jsonl")));
  if (j.contains("format_options")) {
    const auto& o = j.at("format_options");
    if (o.contains("delimiter")) {
      auto d = o.at("delimiter").get<std::string>();
      if (d.size() != 1) fail(ErrorCode::kInvalidArgument, "delimiter must be one character");
      src.options.delimiter = d[0];
    }
    src.options.has_header = o.value("has_header", true);
    src.options.gzip = o.value("gzip", false);
  }
  if (!j.contains("schema")) fail(ErrorCode::kInvalidArgument, "manifest needs 'schema'");
  src.schema = schema_from_json_value(j.at("schema"));
  if (j.contains("field_map")) {
    for (const auto& [k, v] : j.at("field_map").items()) src.field_map[k] = v;
  }
  for (const auto& col : src.schema.columns()) {
    if (!src.field_map.count(col.name)) {
      src.field_map[col.name] = src.format == SourceFormat::kText ? json("line") : json(col.name);
    }
  }
  for (const auto& op : j.value("ops", json::array())) {
    auto kind = op.at("op").get<std::string>();
    if (kind == "map" || kind == "filter") {
      auto spec = registry.spec(kind == "map" ? OpKind::kMap : OpKind::kFilter, op.at("transform").get<std::string>(),
                                op.value("params", json::object()), op.value("batched", false),
                                op.value("batch_size", kDefaultMapBatchSize));
      if (kind == "map") {
        p.map(std::move(spec));
      } else {
        p.filter(std::move(spec));
      }
    } else if (kind == "take") {
      p.take(op.at("n").get<std::uint64_t>());
    } else if (kind == "skip") {
      p.skip(op.at("n").get<std::uint64_t>());
    } else if (kind == "shuffle") {
      p.shuffle(op.value("buffer_size", std::uint64_t{1000}), op.value("seed", std::uint64_t{0}));
    } else {
      fail(ErrorCode::kInvalidArgument, "unknown stream op '" + kind + "'");
    }
  }
  return p;
}

}  // namespace dataforge

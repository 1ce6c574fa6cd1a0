#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "dataforge/schema.hpp"
#include "dataforge/source.hpp"
#include "dataforge/transform.hpp"

namespace dataforge {

/// Ordered shards sharing one schema, read front to back.
struct StreamSource {
  std::vector<std::string> shards;
  SourceFormat format = SourceFormat::kJsonl;
  FormatOptions options;
  Schema schema;
  FieldMap field_map;
  std::filesystem::path base_dir;
  std::size_t read_buffer_bytes = kReadBufferBytes;
};

struct StreamOp {
  enum class Kind { kMap, kFilter, kShuffle, kTake, kSkip };
  Kind kind = Kind::kTake;
  TransformSpec spec;                 // map, filter
  std::optional<Schema> out_schema;   // map; else derived from the registry
  std::uint64_t n = 0;                // take, skip, shuffle buffer size
  std::uint64_t seed = 0;             // shuffle
};

struct StreamPipeline {
  StreamSource source;
  std::vector<StreamOp> ops;

  StreamPipeline& map(TransformSpec spec, std::optional<Schema> out_schema = std::nullopt);
  StreamPipeline& filter(TransformSpec spec);
  StreamPipeline& shuffle(std::uint64_t buffer_size, std::uint64_t seed);
  StreamPipeline& take(std::uint64_t n);
  StreamPipeline& skip(std::uint64_t n);
};

/// Single-pass iterator. Once next() has thrown, the stream is finished.
class RowStream {
 public:
  virtual ~RowStream() = default;
  virtual std::optional<Row> next() = 0;
  virtual const Schema& schema() const = 0;
};

std::unique_ptr<RowStream> open_stream(const StreamSource& source);
std::unique_ptr<RowStream> stream_rows(const StreamPipeline& p, const TransformRegistry& registry);

/// Holds up to buffer_size rows; each step emits slot next_below(size) and
/// refills it from upstream, or with the last slot once upstream is dry.
std::unique_ptr<RowStream> buffered_shuffle(std::unique_ptr<RowStream> upstream, std::uint64_t buffer_size,
                                            std::uint64_t seed);

/// Materializes the source through the builder path and runs the same ops
/// with Transformer. Shuffle ops are rejected.
std::vector<Row> eager_rows(const StreamPipeline& p, const TransformRegistry& registry,
                            const std::filesystem::path& cache_dir);

bool stream_eager_equivalence(const StreamPipeline& p, const TransformRegistry& registry,
                              const std::filesystem::path& cache_dir);

/// {"shards": [...], "format", "format_options", "schema", "field_map",
///  "ops": [{"op": "map", "transform": id, "params": {...}}, {"op": "take", "n": 5}, ...]}
StreamPipeline pipeline_from_json(const nlohmann::json& j, const TransformRegistry& registry,
                                  const std::filesystem::path& base_dir = {});

}  // namespace dataforge

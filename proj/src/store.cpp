#include "dataforge/store.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstring>
#include <thread>

#include "dataforge/error.hpp"
#include "dataforge/kernels.hpp"

namespace dataforge {

static_assert(std::endian::native == std::endian::little, "DSET1 readers assume a little-endian host");

namespace fs = std::filesystem;

StoreCounters& store_counters() {
  static StoreCounters counters;
  return counters;
}

// ---------------------------------------------------------------------------
// MappedFile

MappedFile::MappedFile(const fs::path& path) : path_(path) {
  int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) fail(ErrorCode::kIoError, "open " + path.string() + ": " + std::strerror(errno));
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    int err = errno;
    ::close(fd);
    fail(ErrorCode::kIoError, "stat " + path.string() + ": " + std::strerror(err));
  }
  size_ = static_cast<std::size_t>(st.st_size);
  if (size_ > 0) {
    data_ = ::mmap(nullptr, size_, PROT_READ, MAP_SHARED, fd, 0);
    if (data_ == MAP_FAILED) {
      int err = errno;
      data_ = nullptr;
      ::close(fd);
      fail(ErrorCode::kIoError, "mmap " + path.string() + ": " + std::strerror(err));
    }
  }
  ::close(fd);
}

MappedFile::~MappedFile() {
  if (data_ != nullptr) ::munmap(data_, size_);
}

// ---------------------------------------------------------------------------
// Layout shared by reader and writer

namespace {

constexpr std::uint64_t pad8(std::uint64_t n) { return (n + 7) & ~std::uint64_t{7}; }

template <typename T>
T load(const std::byte* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void store_le(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

[[noreturn]] void corrupt(const std::string& what) { fail(ErrorCode::kTruncatedFile, "corrupt DSET1 file: " + what); }

std::size_t count_buffers(const FeatureType& t) {
  switch (t.tag()) {
    case TypeTag::kString:
    case TypeTag::kBinary: return 2;
    case TypeTag::kSequence: return (t.fixed_length() ? 0 : 1) + count_buffers(t.inner());
    case TypeTag::kTranslation: return 2 * t.languages().size();
    case TypeTag::kRecord: {
      std::size_t n = 0;
      for (const auto& f : t.fields()) n += count_buffers(f.type);
      return n;
    }
    default: return 1;
  }
}

std::size_t count_buffers(const Schema& schema) {
  std::size_t n = 0;
  for (const auto& c : schema.columns()) n += 1 + count_buffers(c.type);
  return n;
}

class BufferCursor {
 public:
  explicit BufferCursor(std::span<const std::span<const std::byte>> buffers) : buffers_(buffers) {}
  std::span<const std::byte> take(std::uint64_t expected_len, const char* what) {
    if (pos_ >= buffers_.size()) corrupt("missing buffer");
    auto b = buffers_[pos_++];
    if (b.size() != expected_len) corrupt(std::string(what) + " buffer has unexpected length");
    return b;
  }
  std::span<const std::uint64_t> take_offsets(std::uint64_t n) {
    auto b = take((n + 1) * 8, "offsets");
    std::span<const std::uint64_t> offs(reinterpret_cast<const std::uint64_t*>(b.data()), n + 1);
    if (offs[0] != 0) corrupt("offsets must start at 0");
    return offs;
  }
  bool done() const { return pos_ == buffers_.size(); }

 private:
  std::span<const std::span<const std::byte>> buffers_;
  std::size_t pos_ = 0;
};

ArrayView string_view_of(BufferCursor& cur, std::uint64_t n) {
  ArrayView a;
  a.offsets = cur.take_offsets(n);
  a.data = cur.take(a.offsets[n], "string data");
  return a;
}

ArrayView build_view(const FeatureType& t, std::uint64_t n, BufferCursor& cur) {
  ArrayView a;
  switch (t.tag()) {
    case TypeTag::kInt64:
    case TypeTag::kFloat64:
    case TypeTag::kClassLabel: a.data = cur.take(n * 8, "fixed-width"); break;
    case TypeTag::kBool: a.data = cur.take(n, "bool"); break;
    case TypeTag::kString:
    case TypeTag::kBinary: a = string_view_of(cur, n); break;
    case TypeTag::kSequence:
      if (auto fixed = t.fixed_length()) {
        a.children.push_back(build_view(t.inner(), n * *fixed, cur));
      } else {
        a.offsets = cur.take_offsets(n);
        a.children.push_back(build_view(t.inner(), a.offsets[n], cur));
      }
      break;
    case TypeTag::kTranslation:
      for (std::size_t i = 0; i < t.languages().size(); ++i) a.children.push_back(string_view_of(cur, n));
      break;
    case TypeTag::kTensor: a.data = cur.take(n * t.element_count() * dtype_size(t.dtype()), "tensor"); break;
    case TypeTag::kRecord:
      for (const auto& f : t.fields()) a.children.push_back(build_view(f.type, n, cur));
      break;
  }
  return a;
}

std::vector<ColumnView> build_columns(const Schema& schema, std::uint64_t rows,
                                      std::span<const std::span<const std::byte>> buffers) {
  BufferCursor cur(buffers);
  std::vector<ColumnView> cols;
  cols.reserve(schema.size());
  for (const auto& c : schema.columns()) {
    ColumnView cv;
    auto validity = cur.take((rows + 7) / 8, "validity");
    cv.validity = {reinterpret_cast<const std::uint8_t*>(validity.data()), validity.size()};
    cv.array = build_view(c.type, rows, cur);
    cols.push_back(std::move(cv));
  }
  if (!cur.done()) corrupt("extra buffers in batch");
  return cols;
}

std::pair<std::uint64_t, std::uint64_t> range_at(const ArrayView& a, std::uint64_t i) {
  store_counters().offsets_reads.fetch_add(1, std::memory_order_relaxed);
  auto lo = a.offsets[i];
  auto hi = a.offsets[i + 1];
  if (hi < lo) corrupt("offsets are not monotone");
  return {lo, hi};
}

std::string string_at(const ArrayView& a, std::uint64_t i) {
  auto [lo, hi] = range_at(a, i);
  if (hi > a.data.size()) corrupt("offset past end of data");
  return std::string(reinterpret_cast<const char*>(a.data.data() + lo), hi - lo);
}

Value decode(const FeatureType& t, const ArrayView& a, std::uint64_t i) {
  switch (t.tag()) {
    case TypeTag::kInt64:
    case TypeTag::kClassLabel: return Value(load<std::int64_t>(a.data.data() + i * 8));
    case TypeTag::kFloat64: return Value(load<double>(a.data.data() + i * 8));
    case TypeTag::kBool: return Value(a.data[i] != std::byte{0});
    case TypeTag::kString: return Value(string_at(a, i));
    case TypeTag::kBinary: return Value(Bytes{string_at(a, i)});
    case TypeTag::kSequence: {
      std::uint64_t lo, hi;
      if (auto fixed = t.fixed_length()) {
        lo = i * *fixed;
        hi = lo + *fixed;
      } else {
        std::tie(lo, hi) = range_at(a, i);
      }
      List items;
      items.reserve(hi - lo);
      for (auto k = lo; k < hi; ++k) items.push_back(decode(t.inner(), a.children[0], k));
      return Value(std::move(items));
    }
    case TypeTag::kTranslation: {
      Map m;
      const auto& langs = t.languages();
      for (std::size_t k = 0; k < langs.size(); ++k) m.emplace(langs[k], Value(string_at(a.children[k], i)));
      return Value(std::move(m));
    }
    case TypeTag::kTensor: {
      const auto k = t.element_count();
      List items;
      items.reserve(k);
      const std::byte* base = a.data.data() + i * k * dtype_size(t.dtype());
      for (std::uint64_t e = 0; e < k; ++e) {
        switch (t.dtype()) {
          case TensorDtype::kInt64: items.emplace_back(load<std::int64_t>(base + e * 8)); break;
          case TensorDtype::kFloat32: items.emplace_back(static_cast<double>(load<float>(base + e * 4))); break;
          case TensorDtype::kFloat64: items.emplace_back(load<double>(base + e * 8)); break;
        }
      }
      return Value(std::move(items));
    }
    case TypeTag::kRecord: {
      Map m;
      const auto& fields = t.fields();
      for (std::size_t k = 0; k < fields.size(); ++k) m.emplace(fields[k].name, decode(fields[k].type, a.children[k], i));
      return Value(std::move(m));
    }
  }
  return Value();
}

bool is_valid_slot(const ColumnView& c, std::uint64_t i) { return (c.validity[i / 8] >> (i % 8)) & 1U; }

Value decode_cell(const Column& col, const ColumnView& cv, std::uint64_t i) {
  if (!is_valid_slot(cv, i)) return Value();
  return decode(col.type, cv.array, i);
}

Row decode_row(const Schema& schema, const BatchRef& batch, std::uint64_t local) {
  Row row;
  row.reserve(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) row.push_back(decode_cell(schema[c], batch.columns[c], local));
  store_counters().rows_decoded.fetch_add(1, std::memory_order_relaxed);
  return row;
}

void hash_batch(Sha256& h, std::uint64_t rows, std::span<const std::span<const std::byte>> buffers) {
  h.update_u64(rows);
  h.update_u64(buffers.size());
  for (auto b : buffers) {
    h.update_u64(b.size());
    h.update(b);
  }
}

Fingerprint fingerprint_of(std::string_view schema_json, std::span<const BatchRef> batches) {
  Sha256 h;
  h.update_framed(schema_json);
  for (const auto& b : batches) hash_batch(h, b.rows, b.buffers);
  return Fingerprint(h.finish());
}

}  // namespace

// ---------------------------------------------------------------------------
// Table

struct Table::State {
  Schema schema;
  std::vector<BatchRef> batches;
  std::vector<std::uint64_t> cumulative;
  Fingerprint fingerprint;
  fs::path path;
};

const Table::State& Table::state() const {
  if (!state_) fail(ErrorCode::kInvalidArgument, "use of an empty Table handle");
  return *state_;
}

const Schema& Table::schema() const { return state().schema; }
std::uint64_t Table::num_rows() const {
  const auto& c = state().cumulative;
  return c.empty() ? 0 : c.back();
}
std::size_t Table::num_batches() const { return state().batches.size(); }
const std::vector<std::uint64_t>& Table::cumulative_rows() const { return state().cumulative; }
const Fingerprint& Table::fingerprint() const { return state().fingerprint; }
const fs::path& Table::path() const { return state().path; }
const BatchRef& Table::batch(std::size_t b) const { return state().batches.at(b); }

std::size_t Table::batch_for_row(std::uint64_t row) const {
  const auto& c = state().cumulative;
  if (row >= num_rows()) {
    fail(ErrorCode::kOutOfBounds, "row " + std::to_string(row) + " out of range [0, " + std::to_string(num_rows()) + ")");
  }
  return static_cast<std::size_t>(std::upper_bound(c.begin(), c.end(), row) - c.begin());
}

Row Table::row(std::uint64_t i) const {
  auto b = batch_for_row(i);
  const auto& st = state();
  std::uint64_t first = b == 0 ? 0 : st.cumulative[b - 1];
  return decode_row(st.schema, st.batches[b], i - first);
}

Value Table::cell(std::uint64_t i, std::size_t column) const {
  auto b = batch_for_row(i);
  const auto& st = state();
  std::uint64_t first = b == 0 ? 0 : st.cumulative[b - 1];
  return decode_cell(st.schema.columns().at(column), st.batches[b].columns[column], i - first);
}

std::vector<Row> Table::slice(std::uint64_t start, std::uint64_t end) const {
  if (start > end || end > num_rows()) {
    fail(ErrorCode::kOutOfBounds, "slice [" + std::to_string(start) + ", " + std::to_string(end) + ") outside [0, " +
                                      std::to_string(num_rows()) + "]");
  }
  std::vector<Row> out;
  if (start == end) return out;
  out.reserve(end - start);
  const auto& st = state();
  std::size_t b = batch_for_row(start);
  std::uint64_t i = start;
  while (i < end) {
    std::uint64_t first = b == 0 ? 0 : st.cumulative[b - 1];
    std::uint64_t stop = std::min(end, st.cumulative[b]);
    for (; i < stop; ++i) out.push_back(decode_row(st.schema, st.batches[b], i - first));
    ++b;
  }
  return out;
}

std::vector<Row> Table::read_all() const { return slice(0, num_rows()); }

void Table::for_each_row(const std::function<void(std::uint64_t, const Row&)>& fn) const {
  const auto& st = state();
  std::uint64_t i = 0;
  for (const auto& batch : st.batches) {
    for (std::uint64_t local = 0; local < batch.rows; ++local, ++i) fn(i, decode_row(st.schema, batch, local));
  }
}

ColumnReader Table::column(std::string_view name) const { return ColumnReader(*this, schema().index_of(name)); }

// ---------------------------------------------------------------------------
// ColumnReader

ColumnReader::ColumnReader(Table table, std::size_t column) : table_(std::move(table)), column_(column) {}

const FeatureType& ColumnReader::type() const { return table_.schema()[column_].type; }

std::optional<Value> ColumnReader::next() {
  while (batch_ < table_.num_batches() && index_ >= table_.batch(batch_).rows) {
    ++batch_;
    index_ = 0;
  }
  if (batch_ >= table_.num_batches()) return std::nullopt;
  const auto& b = table_.batch(batch_);
  return decode_cell(table_.schema()[column_], b.columns[column_], index_++);
}

std::vector<std::span<const std::int64_t>> ColumnReader::int64_chunks() const {
  auto tag = type().tag();
  if (tag != TypeTag::kInt64 && tag != TypeTag::kClassLabel) fail(ErrorCode::kWrongType, "column is not int64");
  std::vector<std::span<const std::int64_t>> out;
  for (std::size_t b = 0; b < table_.num_batches(); ++b) {
    const auto& data = table_.batch(b).columns[column_].array.data;
    out.emplace_back(reinterpret_cast<const std::int64_t*>(data.data()), data.size() / 8);
  }
  return out;
}

std::vector<std::span<const double>> ColumnReader::float64_chunks() const {
  if (type().tag() != TypeTag::kFloat64) fail(ErrorCode::kWrongType, "column is not float64");
  std::vector<std::span<const double>> out;
  for (std::size_t b = 0; b < table_.num_batches(); ++b) {
    const auto& data = table_.batch(b).columns[column_].array.data;
    out.emplace_back(reinterpret_cast<const double*>(data.data()), data.size() / 8);
  }
  return out;
}

std::uint64_t ColumnReader::null_count() const {
  std::uint64_t nulls = 0;
  for (std::size_t b = 0; b < table_.num_batches(); ++b) {
    const auto& batch = table_.batch(b);
    const auto& validity = batch.columns[column_].validity;
    std::uint64_t valid = 0;
    for (auto byte : validity) valid += static_cast<std::uint64_t>(std::popcount(byte));
    nulls += batch.rows - valid;
  }
  return nulls;
}

std::int64_t column_sum_int64(const Table& table, std::string_view column) {
  std::uint64_t total = 0;
  for (auto chunk : table.column(column).int64_chunks()) total += static_cast<std::uint64_t>(kernels::sum(chunk));
  return static_cast<std::int64_t>(total);
}

// ---------------------------------------------------------------------------
// Reader

Table open_table(const fs::path& path, OpenOptions options) {
  auto file = std::make_shared<const MappedFile>(path);
  auto bytes = file->bytes();
  const std::byte* base = bytes.data();
  const std::uint64_t size = bytes.size();

  if (size < sizeof(kMagic)) fail(ErrorCode::kTruncatedFile, path.string() + ": shorter than the DSET1 magic");
  if (std::memcmp(base, kMagic, sizeof(kMagic)) != 0) fail(ErrorCode::kBadMagic, path.string() + ": not a DSET1 file");
  if (size < 12) fail(ErrorCode::kTruncatedFile, path.string() + ": truncated header");
  auto version = load<std::uint16_t>(base + 6);
  if (version != kFormatVersion) {
    fail(ErrorCode::kUnsupportedVersion, path.string() + ": unsupported DSET1 version " + std::to_string(version));
  }
  auto schema_len = load<std::uint32_t>(base + 8);
  const std::uint64_t header_end = pad8(12 + std::uint64_t{schema_len});
  constexpr std::uint64_t kTrailer = 4 + sizeof(kMagic);
  if (size < header_end + 8 + 32 + kTrailer) fail(ErrorCode::kTruncatedFile, path.string() + ": truncated");
  if (std::memcmp(base + size - sizeof(kMagic), kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorCode::kTruncatedFile, path.string() + ": trailing magic missing (file truncated?)");
  }
  auto footer_len = load<std::uint32_t>(base + size - kTrailer);
  if (footer_len + kTrailer > size - header_end) fail(ErrorCode::kTruncatedFile, path.string() + ": footer length");
  const std::uint64_t footer_start = size - kTrailer - footer_len;
  auto batch_count = load<std::uint64_t>(base + footer_start);
  if (footer_start % 8 != 0 || footer_len != 8 + 16 * batch_count + 32) {
    fail(ErrorCode::kTruncatedFile, path.string() + ": footer length check failed");
  }

  auto state = std::make_shared<Table::State>();
  state->path = path;
  const std::string_view schema_json(reinterpret_cast<const char*>(base + 12), schema_len);
  state->schema = schema_from_json(schema_json);
  const std::size_t buffers_per_batch = count_buffers(state->schema);

  state->batches.reserve(batch_count);
  state->cumulative.reserve(batch_count);
  std::uint64_t prev_cum = 0;
  std::uint64_t min_offset = header_end;
  for (std::uint64_t b = 0; b < batch_count; ++b) {
    const std::byte* entry = base + footer_start + 8 + 16 * b;
    auto offset = load<std::uint64_t>(entry);
    auto cum = load<std::uint64_t>(entry + 8);
    if (offset < min_offset || offset % 8 != 0 || offset + 12 > footer_start) {
      fail(ErrorCode::kTruncatedFile, path.string() + ": batch offset out of range");
    }
    if (cum <= prev_cum) fail(ErrorCode::kTruncatedFile, path.string() + ": cumulative rows not increasing");
    BatchRef batch;
    batch.file = file;
    batch.rows = load<std::uint64_t>(base + offset);
    auto nbuf = load<std::uint32_t>(base + offset + 8);
    if (batch.rows != cum - prev_cum || nbuf != buffers_per_batch) {
      fail(ErrorCode::kTruncatedFile, path.string() + ": batch header disagrees with footer");
    }
    std::uint64_t cursor = pad8(offset + 12 + 8 * std::uint64_t{nbuf});
    if (cursor > footer_start) fail(ErrorCode::kTruncatedFile, path.string() + ": batch header overruns");
    batch.buffers.reserve(nbuf);
    for (std::uint32_t k = 0; k < nbuf; ++k) {
      auto len = load<std::uint64_t>(base + offset + 12 + 8 * std::uint64_t{k});
      if (len > footer_start - cursor) fail(ErrorCode::kTruncatedFile, path.string() + ": buffer overruns");
      batch.buffers.emplace_back(base + cursor, len);
      cursor = pad8(cursor + len);
    }
    if (cursor > footer_start) fail(ErrorCode::kTruncatedFile, path.string() + ": buffer overruns footer");
    batch.columns = build_columns(state->schema, batch.rows, batch.buffers);
    min_offset = cursor;
    prev_cum = cum;
    state->cumulative.push_back(cum);
    state->batches.push_back(std::move(batch));
  }

  Digest stored{};
  std::memcpy(stored.data(), base + footer_start + 8 + 16 * batch_count, stored.size());
  state->fingerprint = Fingerprint(stored);
  if (options.verify && fingerprint_of(schema_json, state->batches) != state->fingerprint) {
    fail(ErrorCode::kChecksumMismatch, path.string() + ": content does not match footer fingerprint");
  }
  return Table(std::move(state));
}

// ---------------------------------------------------------------------------
// Writer

namespace {

class FileSink {
 public:
  explicit FileSink(const fs::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd_ < 0) fail(ErrorCode::kIoError, "create " + path.string() + ": " + std::strerror(errno));
    buffer_.reserve(kBufferSize);
  }
  ~FileSink() {
    if (fd_ >= 0) ::close(fd_);
  }
  FileSink(const FileSink&) = delete;
  FileSink& operator=(const FileSink&) = delete;

  void write(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    if (buffer_.size() + n > kBufferSize) flush();
    if (n >= kBufferSize) {
      write_fully(p, n);
    } else {
      buffer_.insert(buffer_.end(), p, p + n);
    }
    position_ += n;
  }
  template <typename T>
  void put(T v) {
    write(&v, sizeof(T));
  }
  void pad_to_8() {
    static constexpr std::uint8_t kZeros[8] = {};
    write(kZeros, pad8(position_) - position_);
  }
  std::uint64_t position() const { return position_; }

  void close() {
    flush();
    if (::close(fd_) != 0) {
      fd_ = -1;
      raise("close");
    }
    fd_ = -1;
  }

 private:
  static constexpr std::size_t kBufferSize = 1 << 20;

  [[noreturn]] void raise(const char* op) {
    int err = errno;
    auto code = (err == ENOSPC || err == EDQUOT) ? ErrorCode::kDiskFull : ErrorCode::kIoError;
    fail(code, std::string(op) + " " + path_.string() + ": " + std::strerror(err));
  }

  void flush() {
    write_fully(buffer_.data(), buffer_.size());
    buffer_.clear();
  }

  void write_fully(const std::uint8_t* p, std::size_t n) {
    while (n > 0) {
      ssize_t w = ::write(fd_, p, n);
      if (w < 0) {
        if (errno == EINTR) continue;
        raise("write");
      }
      p += w;
      n -= static_cast<std::size_t>(w);
    }
  }

  fs::path path_;
  int fd_ = -1;
  std::vector<std::uint8_t> buffer_;
  std::uint64_t position_ = 0;
};

class ArrayBuilder {
 public:
  explicit ArrayBuilder(FeatureType type) : type_(std::move(type)) {
    switch (type_.tag()) {
      case TypeTag::kString:
      case TypeTag::kBinary: offsets_.push_back(0); break;
      case TypeTag::kSequence:
        if (!type_.fixed_length()) offsets_.push_back(0);
        children_.emplace_back(type_.inner());
        break;
      case TypeTag::kTranslation:
        for (std::size_t i = 0; i < type_.languages().size(); ++i) children_.emplace_back(FeatureType::string());
        break;
      case TypeTag::kRecord:
        for (const auto& f : type_.fields()) children_.emplace_back(f.type);
        break;
      default: break;
    }
  }

  void append(const Value& v) {
    switch (type_.tag()) {
      case TypeTag::kInt64:
      case TypeTag::kClassLabel: store_le(data_, v.as_int()); break;
      case TypeTag::kFloat64: store_le(data_, v.as_float()); break;
      case TypeTag::kBool: data_.push_back(v.as_bool() ? 1 : 0); break;
      case TypeTag::kString: append_bytes(v.as_text()); break;
      case TypeTag::kBinary: append_bytes(v.as_bytes().data); break;
      case TypeTag::kSequence:
        for (const auto& e : v.as_list()) children_[0].append(e);
        if (!type_.fixed_length()) offsets_.push_back(offsets_.back() + v.as_list().size());
        break;
      case TypeTag::kTranslation: {
        const auto& langs = type_.languages();
        for (std::size_t k = 0; k < langs.size(); ++k) children_[k].append(v.as_map().at(langs[k]));
        break;
      }
      case TypeTag::kTensor:
        for (const auto& e : v.as_list()) append_tensor_element(e.is_int() ? static_cast<double>(e.as_int()) : e.as_float(), e);
        break;
      case TypeTag::kRecord: {
        const auto& fields = type_.fields();
        for (std::size_t k = 0; k < fields.size(); ++k) children_[k].append(v.as_map().at(fields[k].name));
        break;
      }
    }
  }

  /// Zero value for a null slot.
  void append_default() {
    switch (type_.tag()) {
      case TypeTag::kInt64:
      case TypeTag::kClassLabel:
      case TypeTag::kFloat64: data_.insert(data_.end(), 8, 0); break;
      case TypeTag::kBool: data_.push_back(0); break;
      case TypeTag::kString:
      case TypeTag::kBinary: offsets_.push_back(offsets_.back()); break;
      case TypeTag::kSequence:
        if (auto fixed = type_.fixed_length()) {
          for (std::uint64_t k = 0; k < *fixed; ++k) children_[0].append_default();
        } else {
          offsets_.push_back(offsets_.back());
        }
        break;
      case TypeTag::kTensor: data_.insert(data_.end(), type_.element_count() * dtype_size(type_.dtype()), 0); break;
      case TypeTag::kTranslation:
      case TypeTag::kRecord:
        for (auto& c : children_) c.append_default();
        break;
    }
  }

  void emit(std::vector<std::vector<std::uint8_t>>& out) {
    if (!offsets_.empty()) {
      std::vector<std::uint8_t> offs(offsets_.size() * 8);
      std::memcpy(offs.data(), offsets_.data(), offs.size());
      out.push_back(std::move(offs));
      offsets_.assign(1, 0);
    }
    switch (type_.tag()) {
      case TypeTag::kSequence:
      case TypeTag::kTranslation:
      case TypeTag::kRecord:
        for (auto& c : children_) c.emit(out);
        break;
      default:
        out.push_back(std::move(data_));
        data_ = {};
        break;
    }
  }

 private:
  void append_bytes(const std::string& s) {
    data_.insert(data_.end(), s.begin(), s.end());
    offsets_.push_back(offsets_.back() + s.size());
  }

  void append_tensor_element(double d, const Value& e) {
    switch (type_.dtype()) {
      case TensorDtype::kInt64: store_le(data_, e.as_int()); break;
      case TensorDtype::kFloat32: store_le(data_, static_cast<float>(d)); break;
      case TensorDtype::kFloat64: store_le(data_, d); break;
    }
  }

  FeatureType type_;
  std::vector<std::uint8_t> data_;
  std::vector<std::uint64_t> offsets_;
  std::vector<ArrayBuilder> children_;
};

fs::path temp_path_for(const fs::path& path) {
  static std::atomic<std::uint64_t> counter{0};
  auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  return path.string() + ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(tid % 100000) + "-" +
         std::to_string(counter.fetch_add(1));
}

}  // namespace

struct TableWriter::Impl {
  fs::path final_path;
  fs::path temp_path;
  Schema schema;
  std::uint64_t batch_rows;
  FileSink sink;
  Sha256 hasher;
  std::vector<std::vector<std::uint8_t>> validity;
  std::vector<ArrayBuilder> columns;
  std::uint64_t pending = 0;
  std::uint64_t total = 0;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> footer;
  bool finished = false;

  Impl(fs::path path, Schema s, std::uint64_t rows_per_batch)
      : final_path(std::move(path)),
        temp_path(temp_path_for(final_path)),
        schema(std::move(s)),
        batch_rows(rows_per_batch),
        sink(temp_path) {
    if (batch_rows == 0) fail(ErrorCode::kInvalidArgument, "batch_rows must be >= 1");
    for (const auto& c : schema.columns()) columns.emplace_back(c.type);
    validity.resize(schema.size());
    const auto json = schema_to_json(schema);
    sink.write(kMagic, sizeof(kMagic));
    sink.put<std::uint16_t>(kFormatVersion);
    sink.put<std::uint32_t>(static_cast<std::uint32_t>(json.size()));
    sink.write(json.data(), json.size());
    sink.pad_to_8();
    hasher.update_framed(json);
  }

  void add(const Row& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      auto& bits = validity[c];
      if (pending % 8 == 0) bits.push_back(0);
      if (row[c].is_null()) {
        columns[c].append_default();
      } else {
        bits.back() |= static_cast<std::uint8_t>(1U << (pending % 8));
        columns[c].append(row[c]);
      }
    }
    ++pending;
    ++total;
    if (pending == batch_rows) flush_batch();
  }

  void flush_batch() {
    if (pending == 0) return;
    std::vector<std::vector<std::uint8_t>> buffers;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      buffers.push_back(std::move(validity[c]));
      validity[c] = {};
      columns[c].emit(buffers);
    }
    footer.emplace_back(sink.position(), total);
    sink.put<std::uint64_t>(pending);
    sink.put<std::uint32_t>(static_cast<std::uint32_t>(buffers.size()));
    for (const auto& b : buffers) sink.put<std::uint64_t>(b.size());
    sink.pad_to_8();
    hasher.update_u64(pending);
    hasher.update_u64(buffers.size());
    for (const auto& b : buffers) {
      sink.write(b.data(), b.size());
      sink.pad_to_8();
      hasher.update_u64(b.size());
      hasher.update(std::as_bytes(std::span(b)));
    }
    pending = 0;
  }
};

TableWriter::TableWriter(fs::path path, Schema schema, std::uint64_t batch_rows)
    : impl_(std::make_unique<Impl>(std::move(path), std::move(schema), batch_rows)) {}

TableWriter::~TableWriter() {
  if (impl_ && !impl_->finished) {
    std::error_code ec;
    fs::remove(impl_->temp_path, ec);
  }
}

void TableWriter::append(const Row& row) {
  validate_row(impl_->schema, row);
  impl_->add(row);
}

std::uint64_t TableWriter::rows_written() const { return impl_->total; }

Table TableWriter::finish() {
  auto& im = *impl_;
  if (im.finished) fail(ErrorCode::kInvalidArgument, "TableWriter::finish called twice");
  im.flush_batch();
  auto digest = im.hasher.finish();
  im.sink.put<std::uint64_t>(im.footer.size());
  for (auto [offset, cum] : im.footer) {
    im.sink.put<std::uint64_t>(offset);
    im.sink.put<std::uint64_t>(cum);
  }
  im.sink.write(digest.data(), digest.size());
  im.sink.put<std::uint32_t>(static_cast<std::uint32_t>(8 + 16 * im.footer.size() + 32));
  im.sink.write(kMagic, sizeof(kMagic));
  im.sink.close();
  std::error_code ec;
  fs::rename(im.temp_path, im.final_path, ec);
  if (ec) fail(ErrorCode::kIoError, "rename " + im.temp_path.string() + ": " + ec.message());
  im.finished = true;
  return open_table(im.final_path);
}

Table write_table(const Schema& schema, std::span<const Row> rows, const fs::path& path, std::uint64_t batch_rows) {
  TableWriter w(path, schema, batch_rows);
  for (const auto& r : rows) w.append(r);
  return w.finish();
}

Table write_table(const Schema& schema, const std::function<std::optional<Row>()>& next, const fs::path& path,
                  std::uint64_t batch_rows) {
  TableWriter w(path, schema, batch_rows);
  while (auto r = next()) w.append(*r);
  return w.finish();
}

// ---------------------------------------------------------------------------
// Concat

Table concat_tables(std::span<const Table> tables) {
  if (tables.empty()) fail(ErrorCode::kInvalidArgument, "concat_tables needs at least one table");
  auto state = std::make_shared<Table::State>();
  state->schema = tables[0].schema();
  std::uint64_t total = 0;
  for (const auto& t : tables) {
    if (!(t.schema() == state->schema)) fail(ErrorCode::kSchemaMismatch, "concat_tables: schemas differ");
    for (std::size_t b = 0; b < t.num_batches(); ++b) {
      state->batches.push_back(t.batch(b));
      total += t.batch(b).rows;
      state->cumulative.push_back(total);
    }
  }
  if (tables.size() == 1) {
    state->fingerprint = tables[0].fingerprint();
    state->path = tables[0].path();
  } else {
    state->fingerprint = fingerprint_of(schema_to_json(state->schema), state->batches);
  }
  return Table(std::move(state));
}

// ---------------------------------------------------------------------------
// DatasetInfo

nlohmann::json info_to_json(const DatasetInfo& info) {
  return nlohmann::json{{"id", info.id},
                        {"description", info.description},
                        {"citation", info.citation},
                        {"version", info.version},
                        {"license", info.license},
                        {"splits", info.split_rows},
                        {"download_checksums", info.download_checksums},
                        {"recommended_metrics", info.recommended_metrics},
                        {"builder_fingerprint", info.builder_fingerprint}};
}

DatasetInfo info_from_json(const nlohmann::json& j) {
  DatasetInfo info;
  info.id = j.value("id", "");
  info.description = j.value("description", "");
  info.citation = j.value("citation", "");
  info.version = j.value("version", "");
  info.license = j.value("license", "");
  if (j.contains("splits")) info.split_rows = j.at("splits").get<std::map<std::string, std::uint64_t>>();
  if (j.contains("download_checksums")) {
    info.download_checksums = j.at("download_checksums").get<std::map<std::string, std::string>>();
  }
  if (j.contains("recommended_metrics")) {
    info.recommended_metrics = j.at("recommended_metrics").get<std::vector<std::string>>();
  }
  info.builder_fingerprint = j.value("builder_fingerprint", "");
  return info;
}

const Table& DatasetDict::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) fail(ErrorCode::kUnknownSplit, "unknown split '" + name + "'");
  return it->second;
}

}  // namespace dataforge

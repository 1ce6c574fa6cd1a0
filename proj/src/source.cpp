#include "dataforge/source.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <cerrno>
#include <charconv>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "dataforge/error.hpp"
#include "internal/http.hpp"

namespace dataforge {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view format_name(SourceFormat f) {
  switch (f) {
    case SourceFormat::kCsv: return "csv";
    case SourceFormat::kJsonl: return "jsonl";
    case SourceFormat::kText: return "text";
  }
  return "?";
}

SourceFormat format_from_name(std::string_view name) {
  if (name == "csv") return SourceFormat::kCsv;
  if (name == "jsonl") return SourceFormat::kJsonl;
  if (name == "text") return SourceFormat::kText;
  fail(ErrorCode::kInvalidArgument, "unknown source format '" + std::string(name) + "'");
}

bool is_remote(std::string_view location) {
  return location.starts_with("http://") || location.starts_with("https://");
}

bool looks_gzipped(std::string_view location) { return location.ends_with(".gz"); }

fs::path resolve_local(const std::string& location, const fs::path& base_dir) {
  fs::path p = location.starts_with("file://") ? fs::path(location.substr(7)) : fs::path(location);
  if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
  return p;
}

// ---------------------------------------------------------------------------
// Byte sources

namespace {

class FileSource final : public ByteSource {
 public:
  explicit FileSource(const fs::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd_ < 0) fail(ErrorCode::kIoError, "open " + path.string() + ": " + std::strerror(errno));
  }
  ~FileSource() override { ::close(fd_); }

  std::size_t read(char* dst, std::size_t n) override {
    for (;;) {
      auto got = ::read(fd_, dst, n);
      if (got >= 0) return static_cast<std::size_t>(got);
      if (errno != EINTR) fail(ErrorCode::kIoError, "read " + path_.string() + ": " + std::strerror(errno));
    }
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

class InflateSource final : public ByteSource {
 public:
  explicit InflateSource(std::unique_ptr<ByteSource> inner) : inner_(std::move(inner)), in_(1 << 16) {
    std::memset(&zs_, 0, sizeof zs_);
    if (inflateInit2(&zs_, 16 + MAX_WBITS) != Z_OK) fail(ErrorCode::kIoError, "inflateInit2 failed");
  }
  ~InflateSource() override { inflateEnd(&zs_); }

  std::size_t read(char* dst, std::size_t n) override {
    zs_.next_out = reinterpret_cast<Bytef*>(dst);
    zs_.avail_out = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    while (zs_.avail_out == n && !done_) {
      if (zs_.avail_in == 0) {
        auto got = inner_->read(in_.data(), in_.size());
        if (got == 0) {
          if (!at_member_end_) fail(ErrorCode::kIoError, "truncated gzip stream");
          done_ = true;
          break;
        }
        zs_.next_in = reinterpret_cast<Bytef*>(in_.data());
        zs_.avail_in = static_cast<uInt>(got);
      }
      at_member_end_ = false;
      int rc = inflate(&zs_, Z_NO_FLUSH);
      if (rc == Z_STREAM_END) {
        // Concatenated members are legal gzip.
        at_member_end_ = true;
        inflateReset(&zs_);
      } else if (rc != Z_OK && rc != Z_BUF_ERROR) {
        fail(ErrorCode::kIoError, std::string("corrupt gzip stream: ") + (zs_.msg ? zs_.msg : "inflate error"));
      }
    }
    return n - zs_.avail_out;
  }

 private:
  std::unique_ptr<ByteSource> inner_;
  std::vector<char> in_;
  z_stream zs_;
  bool done_ = false;
  bool at_member_end_ = false;
};

// Producer thread runs the blocking GET; the consumer drains a bounded queue.
class HttpSource final : public ByteSource {
 public:
  HttpSource(const std::string& url, std::size_t capacity) : url_(url), capacity_(std::max<std::size_t>(capacity, 1)) {
    worker_ = std::thread([this] { run(); });
  }
  ~HttpSource() override {
    {
      std::lock_guard lock(mu_);
      cancelled_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  std::size_t read(char* dst, std::size_t n) override {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !chunks_.empty() || finished_; });
    if (chunks_.empty()) {
      if (!error_.empty()) fail(ErrorCode::kDownloadError, url_ + ": " + error_);
      return 0;
    }
    auto& front = chunks_.front();
    std::size_t take = std::min(n, front.size() - front_pos_);
    std::memcpy(dst, front.data() + front_pos_, take);
    front_pos_ += take;
    queued_ -= take;
    if (front_pos_ == front.size()) {
      chunks_.pop_front();
      front_pos_ = 0;
    }
    lock.unlock();
    cv_.notify_all();
    return take;
  }

 private:
  void run() {
    std::string error;
    try {
      auto [origin, path] = detail::split_url(url_);
      auto client = detail::make_client(origin);
      httplib::Headers headers = {{"User-Agent", detail::user_agent()}};
      int status = 0;
      auto res = client->Get(
          path, headers,
          [&](const httplib::Response& r) {
            status = r.status;
            return r.status == 200;
          },
          [&](const char* data, std::size_t len) {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return queued_ < capacity_ || cancelled_; });
            if (cancelled_) return false;
            chunks_.emplace_back(data, len);
            queued_ += len;
            lock.unlock();
            cv_.notify_all();
            return true;
          });
      if (!res && status != 0 && status != 200) {
        error = "HTTP status " + std::to_string(status);
      } else if (!res) {
        std::lock_guard lock(mu_);
        if (!cancelled_) error = httplib::to_string(res.error());
      }
    } catch (const std::exception& e) {
      error = e.what();
    }
    std::lock_guard lock(mu_);
    error_ = std::move(error);
    finished_ = true;
    cv_.notify_all();
  }

  std::string url_;
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::string> chunks_;
  std::size_t front_pos_ = 0;
  std::size_t queued_ = 0;
  bool cancelled_ = false;
  bool finished_ = false;
  std::string error_;
  std::thread worker_;
};

}  // namespace

std::unique_ptr<ByteSource> open_file_source(const fs::path& path) { return std::make_unique<FileSource>(path); }

std::unique_ptr<ByteSource> open_http_source(const std::string& url, std::size_t buffer_bytes) {
  return std::make_unique<HttpSource>(url, buffer_bytes);
}

std::unique_ptr<ByteSource> inflate_source(std::unique_ptr<ByteSource> inner) {
  return std::make_unique<InflateSource>(std::move(inner));
}

std::unique_ptr<ByteSource> open_source(const std::string& location, const fs::path& base_dir, bool gzip) {
  std::unique_ptr<ByteSource> src;
  if (is_remote(location)) {
    src = open_http_source(location);
  } else {
    src = open_file_source(resolve_local(location, base_dir));
  }
  if (gzip || looks_gzipped(location)) src = inflate_source(std::move(src));
  return src;
}

// ---------------------------------------------------------------------------
// Line and CSV framing

LineReader::LineReader(std::unique_ptr<ByteSource> src, std::size_t buffer_bytes)
    : src_(std::move(src)), buf_(std::max<std::size_t>(buffer_bytes, 4096)) {}

bool LineReader::fill() {
  if (eof_) return false;
  if (pos_ > 0) {
    std::memmove(buf_.data(), buf_.data() + pos_, end_ - pos_);
    end_ -= pos_;
    pos_ = 0;
  }
  if (end_ == buf_.size()) buf_.resize(buf_.size() * 2);
  auto got = src_->read(buf_.data() + end_, buf_.size() - end_);
  if (got == 0) {
    eof_ = true;
    return false;
  }
  end_ += got;
  return true;
}

bool LineReader::next(std::string& line) {
  std::size_t scanned = 0;  // bytes after pos_ already known to hold no '\n'
  for (;;) {
    const char* from = buf_.data() + pos_ + scanned;
    auto* nl = static_cast<const char*>(std::memchr(from, '\n', end_ - pos_ - scanned));
    if (nl != nullptr) {
      auto stop = static_cast<std::size_t>(nl - buf_.data());
      line.assign(buf_.data() + pos_, stop - pos_);
      pos_ = stop + 1;
      ++line_no_;
      return true;
    }
    scanned = end_ - pos_;
    if (!fill()) {
      if (pos_ == end_) return false;
      line.assign(buf_.data() + pos_, end_ - pos_);
      pos_ = end_;
      ++line_no_;
      return true;
    }
  }
}

CsvReader::CsvReader(std::unique_ptr<ByteSource> src, char delimiter) : lines_(std::move(src)), delim_(delimiter) {}

bool CsvReader::next(std::vector<std::string>& fields) {
  enum class State { kStart, kUnquoted, kQuoted, kAfterQuote };
  do {
    if (!lines_.next(line_)) return false;
  } while (line_.empty() || line_ == "\r");
  record_line_ = lines_.line_number();
  fields.clear();
  std::string field;
  State state = State::kStart;
  for (;;) {
    const std::size_t n = line_.size();
    for (std::size_t i = 0; i < n; ++i) {
      const char c = line_[i];
      const bool line_end_cr = c == '\r' && i + 1 == n;
      switch (state) {
        case State::kStart:
          if (c == '"') {
            state = State::kQuoted;
          } else if (c == delim_) {
            fields.push_back(std::move(field));
            field.clear();
          } else if (!line_end_cr) {
            field += c;
            state = State::kUnquoted;
          }
          break;
        case State::kUnquoted:
          if (c == delim_) {
            fields.push_back(std::move(field));
            field.clear();
            state = State::kStart;
          } else if (c == '"') {
            throw ParseError("quote inside unquoted field", lines_.line_number(), i + 1);
          } else if (!line_end_cr) {
            field += c;
          }
          break;
        case State::kQuoted:
          if (c == '"') {
            state = State::kAfterQuote;
          } else {
            field += c;
          }
          break;
        case State::kAfterQuote:
          if (c == '"') {
            field += '"';
            state = State::kQuoted;
          } else if (c == delim_) {
            fields.push_back(std::move(field));
            field.clear();
            state = State::kStart;
          } else if (!line_end_cr) {
            throw ParseError("unexpected character after closing quote", lines_.line_number(), i + 1);
          }
          break;
      }
    }
    if (state != State::kQuoted) break;
    field += '\n';
    if (!lines_.next(line_)) throw ParseError("unterminated quoted field", record_line_);
  }
  fields.push_back(std::move(field));
  return true;
}

// ---------------------------------------------------------------------------
// Typed rows

RowReader::RowReader(std::unique_ptr<ByteSource> src, SourceFormat format, FormatOptions options,
                     const FieldMap& field_map, Schema schema, std::string label)
    : format_(format), schema_(std::move(schema)), label_(std::move(label)) {
  for (const auto& col : schema_.columns()) {
    auto it = field_map.find(col.name);
    if (it == field_map.end()) fail(ErrorCode::kInvalidArgument, "no field_map entry for column '" + col.name + "'");
    accessors_.push_back(it->second);
  }
  switch (format_) {
    case SourceFormat::kCsv: {
      csv_ = std::make_unique<CsvReader>(std::move(src), options.delimiter);
      std::vector<std::string> header;
      if (options.has_header) {
        try {
          if (!csv_->next(header)) header.clear();
        } catch (const ParseError&) {
          rethrow_with_line();
        }
        line_ = csv_->record_line();
      }
      for (std::size_t c = 0; c < accessors_.size(); ++c) {
        const auto& a = accessors_[c];
        if (a.is_number_integer() && a.get<std::int64_t>() >= 0) {
          csv_index_.push_back(a.get<std::size_t>());
        } else if (a.is_string() && options.has_header) {
          auto pos = std::find(header.begin(), header.end(), a.get<std::string>());
          if (pos == header.end() && !header.empty()) {
            fail(ErrorCode::kInvalidArgument, "CSV header has no column '" + a.get<std::string>() + "'");
          }
          csv_index_.push_back(static_cast<std::size_t>(pos - header.begin()));
        } else {
          fail(ErrorCode::kInvalidArgument, "bad CSV accessor for column '" + schema_[c].name + "'");
        }
      }
      break;
    }
    case SourceFormat::kJsonl:
      lines_ = std::make_unique<LineReader>(std::move(src));
      for (std::size_t c = 0; c < accessors_.size(); ++c) {
        const auto& a = accessors_[c];
        if (!a.is_string() || a.get<std::string>().empty()) {
          fail(ErrorCode::kInvalidArgument, "bad JSON accessor for column '" + schema_[c].name + "'");
        }
        auto s = a.get<std::string>();
        if (s.front() == '/') {
          pointers_.emplace_back(s);
        } else {
          pointers_.push_back(json::json_pointer() / s);
        }
      }
      break;
    case SourceFormat::kText:
      lines_ = std::make_unique<LineReader>(std::move(src));
      for (std::size_t c = 0; c < accessors_.size(); ++c) {
        if (accessors_[c] != "line") {
          fail(ErrorCode::kInvalidArgument, "text sources only support the 'line' accessor");
        }
      }
      break;
  }
}

void RowReader::rethrow_with_line() {
  const std::string where = label_.empty() ? "" : label_ + ": ";
  try {
    throw;
  } catch (const ParseError& e) {
    throw ParseError(where + "line " + std::to_string(e.line() ? e.line() : line_) + ": " + e.what(),
                     e.line() ? e.line() : line_, e.column());
  } catch (const TypeError& e) {
    throw TypeError(where + "line " + std::to_string(line_) + ": " + e.what(), e.path(), line_);
  } catch (const Error& e) {
    throw Error(e.code(), where + "line " + std::to_string(line_) + ": " + e.what());
  }
}

Value RowReader::convert_cell(std::size_t col, const std::string& cell) {
  const auto& column = schema_[col];
  if (cell.empty() && column.nullable) return Value();
  const auto& type = column.type;
  switch (type.tag()) {
    case TypeTag::kString: return Value(cell);
    case TypeTag::kBinary: return value_from_json(type, json(cell), column.name);
    case TypeTag::kBool:
      if (cell == "true" || cell == "True" || cell == "1") return Value(true);
      if (cell == "false" || cell == "False" || cell == "0") return Value(false);
      throw TypeError("expected bool, got '" + cell + "'", column.name);
    case TypeTag::kInt64:
    case TypeTag::kClassLabel: {
      std::int64_t v = 0;
      auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec == std::errc() && end == cell.data() + cell.size()) return Value(v);
      if (type.tag() == TypeTag::kClassLabel) return value_from_json(type, json(cell), column.name);
      throw TypeError("expected integer, got '" + cell + "'", column.name);
    }
    case TypeTag::kFloat64: {
      double v = 0;
      auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec == std::errc() && end == cell.data() + cell.size()) return Value(v);
      return value_from_json(type, json(cell), column.name);
    }
    default: {
      auto j = json::parse(cell, nullptr, false);
      if (j.is_discarded()) throw TypeError("expected JSON for a nested column", column.name);
      return value_from_json(type, j, column.name);
    }
  }
}

std::optional<Row> RowReader::next() {
  try {
    Row row;
    row.reserve(schema_.size());
    switch (format_) {
      case SourceFormat::kCsv: {
        if (!csv_->next(fields_)) return std::nullopt;
        line_ = csv_->record_line();
        if (line_ == 1 && !fields_.empty() && fields_[0].starts_with("\xEF\xBB\xBF")) fields_[0].erase(0, 3);
        for (std::size_t c = 0; c < schema_.size(); ++c) {
          if (csv_index_[c] >= fields_.size()) {
            throw ParseError("record has " + std::to_string(fields_.size()) + " fields, column '" + schema_[c].name +
                                 "' needs field " + std::to_string(csv_index_[c] + 1),
                             line_);
          }
          const auto& cell = fields_[csv_index_[c]];
          if (!is_valid_utf8(cell)) throw ParseError("invalid UTF-8", line_);
          row.push_back(convert_cell(c, cell));
        }
        break;
      }
      case SourceFormat::kJsonl: {
        do {
          if (!lines_->next(scratch_)) return std::nullopt;
          line_ = lines_->line_number();
          if (line_ == 1 && scratch_.starts_with("\xEF\xBB\xBF")) scratch_.erase(0, 3);
        } while (scratch_.find_first_not_of(" \t\r") == std::string::npos);
        if (!is_valid_utf8(scratch_)) throw ParseError("invalid UTF-8", line_);
        json obj;
        try {
          obj = json::parse(scratch_);
        } catch (const json::parse_error& e) {
          throw ParseError(std::string("malformed JSON: ") + e.what(), line_, e.byte);
        }
        if (!obj.is_object()) throw ParseError("expected a JSON object", line_);
        for (std::size_t c = 0; c < schema_.size(); ++c) {
          if (obj.contains(pointers_[c])) {
            row.push_back(value_from_json(schema_[c].type, obj.at(pointers_[c]), schema_[c].name));
          } else {
            row.emplace_back();
          }
        }
        break;
      }
      case SourceFormat::kText: {
        if (!lines_->next(scratch_)) return std::nullopt;
        line_ = lines_->line_number();
        if (line_ == 1 && scratch_.starts_with("\xEF\xBB\xBF")) scratch_.erase(0, 3);
        if (!scratch_.empty() && scratch_.back() == '\r') scratch_.pop_back();
        if (!is_valid_utf8(scratch_)) throw ParseError("invalid UTF-8", line_);
        for (std::size_t c = 0; c < schema_.size(); ++c) {
          row.push_back(schema_[c].type.tag() == TypeTag::kString ? Value(scratch_) : convert_cell(c, scratch_));
        }
        break;
      }
    }
    validate_row(schema_, row);
    return row;
  } catch (const Error&) {
    rethrow_with_line();
  }
}

}  // namespace dataforge

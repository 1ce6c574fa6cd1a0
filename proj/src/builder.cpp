#include "dataforge/builder.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <regex>
#include <thread>

#include "dataforge/error.hpp"
#include "internal/fsutil.hpp"
#include "internal/http.hpp"

namespace dataforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::regex& id_pattern() {
  static const std::regex re("[a-z0-9_/-]+");
  return re;
}

const std::regex& semver_pattern() {
  static const std::regex re(R"((0|[1-9][0-9]*)\.(0|[1-9][0-9]*)\.(0|[1-9][0-9]*)([-+][0-9A-Za-z.+-]+)?)");
  return re;
}

std::string get_string(const json& j, const char* key, bool required = false) {
  if (!j.contains(key)) {
    if (required) fail(ErrorCode::kInvalidArgument, std::string("builder is missing '") + key + "'");
    return "";
  }
  if (!j.at(key).is_string()) fail(ErrorCode::kInvalidArgument, std::string("builder field '") + key + "' must be a string");
  return j.at(key).get<std::string>();
}

}  // namespace

bool is_valid_dataset_id(std::string_view id) {
  if (id.empty() || id.front() == '/' || id.back() == '/' || id.find("//") != std::string_view::npos) return false;
  if (id.find("..") != std::string_view::npos) return false;
  return std::regex_match(id.begin(), id.end(), id_pattern());
}

json builder_to_json(const BuilderDef& def) {
  json sources = json::object();
  for (const auto& [split, refs] : def.sources) {
    json list = json::array();
    for (const auto& r : refs) {
      json item = {{"url", r.url}};
      item["sha256"] = r.sha256 ? json(*r.sha256) : json(nullptr);
      list.push_back(std::move(item));
    }
    sources[split] = std::move(list);
  }
  json field_map = json::object();
  for (const auto& [k, v] : def.field_map) field_map[k] = v;
  return json{
      {"id", def.id},
      {"version", def.version},
      {"description", def.description},
      {"citation", def.citation},
      {"license", def.license},
      {"sources", std::move(sources)},
      {"format", std::string(format_name(def.format))},
      {"format_options",
       {{"delimiter", std::string(1, def.options.delimiter)},
        {"has_header", def.options.has_header},
        {"gzip", def.options.gzip},
        {"encoding", "utf-8"}}},
      {"schema", schema_to_json_value(def.schema)},
      {"field_map", std::move(field_map)},
      {"recommended_metrics", def.recommended_metrics},
  };
}

BuilderDef builder_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) fail(ErrorCode::kInvalidArgument, "builder definition must be a JSON object");
  BuilderDef def;
  def.base_dir = base_dir;
  def.id = get_string(j, "id", true);
  if (!is_valid_dataset_id(def.id)) fail(ErrorCode::kInvalidArgument, "invalid dataset id '" + def.id + "'");
  def.version = get_string(j, "version", true);
  if (!std::regex_match(def.version, semver_pattern())) {
    fail(ErrorCode::kInvalidArgument, "version '" + def.version + "' is not semver");
  }
  def.description = get_string(j, "description");
  def.citation = get_string(j, "citation");
  def.license = get_string(j, "license");
  def.format = format_from_name(get_string(j, "format", true));

  if (j.contains("format_options")) {
    const auto& o = j.at("format_options");
    if (o.contains("delimiter")) {
      auto d = o.at("delimiter").get<std::string>();
      if (d.size() != 1 || d == "\"" || d == "\n" || d == "\r") {
        fail(ErrorCode::kInvalidArgument, "delimiter must be one character other than quote or newline");
      }
      def.options.delimiter = d[0];
    }
    if (o.contains("has_header")) def.options.has_header = o.at("has_header").get<bool>();
    if (o.contains("gzip")) def.options.gzip = o.at("gzip").get<bool>();
    if (o.contains("encoding") && o.at("encoding") != "utf-8") {
      fail(ErrorCode::kInvalidArgument, "only utf-8 encoding is supported");
    }
  }

  if (!j.contains("sources") || !j.at("sources").is_object() || j.at("sources").empty()) {
    fail(ErrorCode::kInvalidArgument, "builder needs at least one split in 'sources'");
  }
  for (const auto& [split, refs] : j.at("sources").items()) {
    if (split.empty()) fail(ErrorCode::kInvalidArgument, "split names must be non-empty");
    if (split.find('/') != std::string::npos || split.starts_with(".")) {
      fail(ErrorCode::kInvalidArgument, "invalid split name '" + split + "'");
    }
    auto& list = def.sources[split];
    auto add = [&](const json& r) {
      SourceRef ref;
      if (r.is_string()) {
        ref.url = r.get<std::string>();
      } else {
        ref.url = get_string(r, "url", true);
        if (r.contains("sha256") && !r.at("sha256").is_null()) {
          ref.sha256 = r.at("sha256").get<std::string>();
          Fingerprint::from_hex(*ref.sha256);
        }
      }
      list.push_back(std::move(ref));
    };
    if (refs.is_array()) {
      for (const auto& r : refs) add(r);
    } else {
      add(refs);
    }
    if (list.empty()) fail(ErrorCode::kInvalidArgument, "split '" + split + "' has no sources");
  }

  if (!j.contains("schema")) fail(ErrorCode::kInvalidArgument, "builder is missing 'schema'");
  def.schema = schema_from_json_value(j.at("schema"));

  if (j.contains("field_map")) {
    for (const auto& [k, v] : j.at("field_map").items()) def.field_map[k] = v;
  }
  for (const auto& col : def.schema.columns()) {
    if (!def.field_map.count(col.name)) {
      // A missing accessor defaults to the column's own name (or the line).
      if (j.contains("field_map")) fail(ErrorCode::kInvalidArgument, "field_map has no entry for column '" + col.name + "'");
      def.field_map[col.name] = def.format == SourceFormat::kText ? json("line") : json(col.name);
    }
  }
  for (const auto& [k, _] : def.field_map) {
    if (!def.schema.find(k)) fail(ErrorCode::kInvalidArgument, "field_map names unknown column '" + k + "'");
  }
  if (j.contains("recommended_metrics")) {
    def.recommended_metrics = j.at("recommended_metrics").get<std::vector<std::string>>();
  }
  return def;
}

BuilderDef load_builder(const fs::path& builder_json) {
  auto text = detail::read_file(builder_json);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(builder_json.string() + ": " + e.what(), 0, e.byte);
  }
  return builder_from_json(j, builder_json.parent_path());
}

Fingerprint builder_fingerprint(const BuilderDef& def) {
  return Fingerprint(Sha256::of(builder_to_json(def).dump()));
}

// ---------------------------------------------------------------------------
// Downloads

DownloadCounters& download_counters() {
  static DownloadCounters counters;
  return counters;
}

namespace {

std::string canonical_location(const std::string& url, const fs::path& base_dir) {
  if (is_remote(url)) return url;
  return "file://" + fs::absolute(resolve_local(url, base_dir)).lexically_normal().string();
}

std::string hash_file(const fs::path& path, std::uint64_t* size) {
  auto src = open_file_source(path);
  Sha256 h;
  std::vector<char> buf(1 << 20);
  std::uint64_t total = 0;
  while (auto n = src->read(buf.data(), buf.size())) {
    h.update(std::as_bytes(std::span(buf.data(), n)));
    total += n;
  }
  if (size) *size = total;
  return to_hex(h.finish());
}

class FileOut {
 public:
  explicit FileOut(const fs::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd_ < 0) fail(ErrorCode::kIoError, "create " + path.string() + ": " + std::strerror(errno));
  }
  ~FileOut() {
    if (fd_ >= 0) ::close(fd_);
  }
  void write(const char* data, std::size_t n) {
    while (n > 0) {
      auto w = ::write(fd_, data, n);
      if (w < 0 && errno == EINTR) continue;
      if (w < 0) {
        fail(errno == ENOSPC ? ErrorCode::kDiskFull : ErrorCode::kIoError,
             "write " + path_.string() + ": " + std::strerror(errno));
      }
      data += w;
      n -= static_cast<std::size_t>(w);
    }
  }
  void close() {
    ::fsync(fd_);
    ::close(fd_);
    fd_ = -1;
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

void fetch_local(const fs::path& from, const fs::path& to) {
  download_counters().source_opens.fetch_add(1);
  std::unique_ptr<ByteSource> src;
  try {
    src = open_file_source(from);
  } catch (const Error& e) {
    fail(ErrorCode::kDownloadError, e.what());
  }
  FileOut out(to);
  std::vector<char> buf(1 << 20);
  while (auto n = src->read(buf.data(), buf.size())) out.write(buf.data(), n);
  out.close();
}

void fetch_http(const std::string& url, const fs::path& to, const DownloadOptions& options) {
  auto [origin, path] = detail::split_url(url);
  std::string last_error;
  for (int attempt = 0; attempt <= options.retries; ++attempt) {
    if (attempt > 0) {
      std::chrono::milliseconds delay(1000LL << (attempt - 1));
      if (options.sleep) {
        options.sleep(delay);
      } else {
        std::this_thread::sleep_for(delay);
      }
    }
    download_counters().http_attempts.fetch_add(1);
    download_counters().source_opens.fetch_add(1);
    try {
      auto client = detail::make_client(origin);
      FileOut out(to);
      int status = 0;
      auto res = client->Get(
          path, {{"User-Agent", detail::user_agent()}},
          [&](const httplib::Response& r) {
            status = r.status;
            return r.status == 200;
          },
          [&](const char* data, std::size_t len) {
            out.write(data, len);
            return true;
          });
      out.close();
      if (res && res->status == 200) return;
      last_error = status != 0 && status != 200 ? "HTTP status " + std::to_string(status)
                                                : httplib::to_string(res.error());
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kDiskFull) throw;
      last_error = e.what();
    }
  }
  std::error_code ec;
  fs::remove(to, ec);
  fail(ErrorCode::kDownloadError,
       url + ": " + last_error + " (after " + std::to_string(options.retries) + " retries)");
}

}  // namespace

DownloadRecord download_and_verify(const SourceRef& src, const fs::path& cache_dir, const fs::path& base_dir,
                                   const DownloadOptions& options) {
  const auto location = canonical_location(src.url, base_dir);
  const auto dir = cache_dir / "downloads";
  fs::create_directories(dir);
  DownloadRecord rec;
  rec.url = location;
  rec.path = dir / to_hex(Sha256::of(location));
  const auto meta_path = rec.path.string() + ".json";

  if (fs::exists(rec.path)) {
    rec.sha256 = hash_file(rec.path, &rec.size);
    if (!src.sha256 || *src.sha256 == rec.sha256) {
      std::error_code ec;
      if (fs::exists(meta_path, ec)) {
        try {
          rec.fetched_at = json::parse(detail::read_file(meta_path)).value("fetched_at", std::int64_t{0});
        } catch (const std::exception&) {
        }
      }
      return rec;
    }
    fs::remove(rec.path);
  }

  auto tmp = detail::temp_sibling(rec.path);
  try {
    if (is_remote(location)) {
      fetch_http(location, tmp, options);
    } else {
      fetch_local(resolve_local(src.url, base_dir), tmp);
    }
    rec.sha256 = hash_file(tmp, &rec.size);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  if (src.sha256 && *src.sha256 != rec.sha256) {
    fs::remove(tmp);
    fail(ErrorCode::kChecksumMismatch,
         location + ": expected sha256 " + *src.sha256 + ", got " + rec.sha256);
  }
  fs::rename(tmp, rec.path);
  rec.fetched_at = std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  detail::write_file_atomic(meta_path, json{{"url", location},
                                            {"sha256", rec.sha256},
                                            {"size", rec.size},
                                            {"fetched_at", rec.fetched_at}}
                                           .dump());
  return rec;
}

// ---------------------------------------------------------------------------
// Building

fs::path dataset_cache_dir(const BuilderDef& def, const fs::path& cache_dir) {
  return cache_dir / "datasets" / def.id / def.version / builder_fingerprint(def).hex();
}

std::optional<DatasetDict> open_built_dataset(const BuilderDef& def, const fs::path& cache_dir) {
  const auto dir = dataset_cache_dir(def, cache_dir);
  const auto info_path = dir / "dataset_info.json";
  if (!fs::exists(info_path)) return std::nullopt;
  DatasetDict dd;
  try {
    dd.info = info_from_json(json::parse(detail::read_file(info_path)));
    for (const auto& [split, rows] : dd.info.split_rows) {
      auto t = open_table(dir / (split + ".dset"));
      if (t.num_rows() != rows || !(t.schema() == def.schema)) return std::nullopt;
      dd.splits.emplace(split, std::move(t));
    }
  } catch (const std::exception&) {
    return std::nullopt;
  }
  if (dd.splits.size() != def.sources.size()) return std::nullopt;
  return dd;
}

DatasetDict build_dataset(const BuilderDef& def, const fs::path& cache_dir, const DownloadOptions& options) {
  if (auto hit = open_built_dataset(def, cache_dir)) return std::move(*hit);

  const auto dir = dataset_cache_dir(def, cache_dir);
  fs::create_directories(dir);
  DatasetDict dd;
  dd.info.id = def.id;
  dd.info.description = def.description;
  dd.info.citation = def.citation;
  dd.info.version = def.version;
  dd.info.license = def.license;
  dd.info.recommended_metrics = def.recommended_metrics;
  dd.info.builder_fingerprint = builder_fingerprint(def).hex();

  for (const auto& [split, refs] : def.sources) {
    // Verify every file of the split before writing anything for it.
    std::vector<DownloadRecord> records;
    for (const auto& ref : refs) {
      records.push_back(download_and_verify(ref, cache_dir, def.base_dir, options));
      dd.info.download_checksums[records.back().url] = records.back().sha256;
    }
    TableWriter writer(dir / (split + ".dset"), def.schema);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      auto src = open_file_source(records[i].path);
      if (def.options.gzip || looks_gzipped(refs[i].url)) src = inflate_source(std::move(src));
      RowReader reader(std::move(src), def.format, def.options, def.field_map, def.schema, refs[i].url);
      while (auto row = reader.next()) writer.append(*row);
    }
    auto table = writer.finish();
    dd.info.split_rows[split] = table.num_rows();
    dd.splits.emplace(split, std::move(table));
  }
  detail::write_file_atomic(dir / "dataset_info.json", info_to_json(dd.info).dump(2));
  return dd;
}

}  // namespace dataforge

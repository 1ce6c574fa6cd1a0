#include "dataforge/server.hpp"

#include <charconv>
#include <thread>

#include <httplib.h>

#include "dataforge/error.hpp"

namespace dataforge {

namespace fs = std::filesystem;
using nlohmann::json;
using Params = std::multimap<std::string, std::string>;

namespace {

ApiResponse error_response(int status, std::string code, const std::string& message = {}) {
  json body{{"error", std::move(code)}};
  if (!message.empty()) body["message"] = message;
  return {status, std::move(body)};
}

std::optional<std::string> single(const Params& params, const std::string& key) {
  auto it = params.find(key);
  if (it == params.end()) return std::nullopt;
  return it->second;
}

std::optional<std::uint64_t> parse_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

/// Search query parameter -> tag key.
const std::map<std::string, std::string>& search_params() {
  static const std::map<std::string, std::string> kMap = {
      {"lang", "languages"},         {"task", "task_categories"}, {"task_id", "task_ids"},
      {"license", "licenses"},       {"size", "size_category"},   {"multilinguality", "multilinguality"},
  };
  return kMap;
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < path.size()) {
    auto slash = path.find('/', start);
    if (slash == std::string::npos) slash = path.size();
    if (slash > start) out.push_back(path.substr(start, slash - start));
    start = slash + 1;
  }
  return out;
}

}  // namespace

Api::Api(Registry registry, fs::path cache_dir, const ServeOptions& options)
    : registry_(std::move(registry)), cache_dir_(std::move(cache_dir)) {
  for (const auto& id : registry_.ids()) {
    try {
      if (options.build_missing) {
        built_.emplace(id, load_dataset(registry_, id, cache_dir_, options.download));
      } else if (auto dict = open_built_dataset(registry_.builder(id), cache_dir_)) {
        built_.emplace(id, std::move(*dict));
      } else {
        warnings_.push_back(id + ": not built");
        continue;
      }
      for (const auto& w : built_.at(id).warnings) warnings_.push_back(w);
    } catch (const Error& e) {
      warnings_.push_back(id + ": " + e.what());
    }
  }
}

ApiResponse Api::get(const std::string& path, const Params& params) const {
  auto parts = split_path(path);
  if (parts.size() < 2 || parts[0] != "api") return error_response(404, "not_found");
  if (parts.size() == 2 && parts[1] == "datasets") return list();
  if (parts.size() == 2 && parts[1] == "search") return search(params);
  if (parts[1] != "datasets" || parts.size() > 4) return error_response(404, "not_found");
  const auto& id = parts[2];
  if (!registry_.contains(id)) return error_response(404, "unknown_dataset");
  if (parts.size() == 3) return dataset(id);
  if (parts[3] == "rows") return rows(id, params);
  if (parts[3] == "card") return card(id);
  return error_response(404, "not_found");
}

json Api::summary(const std::string& id) const {
  const auto& entry = registry_.entry(id);
  json tags = json::object();
  for (const auto& [k, v] : registry_.tags(id)) tags[k] = v;
  json out{{"id", id}, {"tags", std::move(tags)}, {"models", entry.models}, {"card_revision", entry.card_revision}};
  auto it = built_.find(id);
  out["built"] = it != built_.end();
  json splits = json::array();
  json num_rows = json::object();
  if (it != built_.end()) {
    for (const auto& [name, rows] : it->second.info.split_rows) {
      splits.push_back(name);
      num_rows[name] = rows;
    }
    out["version"] = it->second.info.version;
    out["description"] = it->second.info.description;
  }
  out["splits"] = std::move(splits);
  out["num_rows"] = std::move(num_rows);
  return out;
}

ApiResponse Api::list() const {
  json arr = json::array();
  for (const auto& id : registry_.ids()) arr.push_back(summary(id));
  return {200, std::move(arr)};
}

ApiResponse Api::dataset(const std::string& id) const {
  auto out = summary(id);
  auto it = built_.find(id);
  if (it != built_.end()) {
    out["info"] = info_to_json(it->second.info);
    out["schema"] = schema_to_json_value(it->second.splits.begin()->second.schema());
  }
  return {200, std::move(out)};
}

ApiResponse Api::rows(const std::string& id, const Params& params) const {
  for (const auto& [k, _] : params) {
    if (k != "split" && k != "offset" && k != "limit") return error_response(400, "bad_request", "unknown parameter '" + k + "'");
  }
  auto it = built_.find(id);
  if (it == built_.end()) return error_response(409, "not_built", "dataset '" + id + "' has not been built");
  const auto& dict = it->second;
  std::string split = dict.splits.count("train") ? "train" : dict.splits.begin()->first;
  if (auto s = single(params, "split")) split = *s;
  auto table = dict.splits.find(split);
  if (table == dict.splits.end()) return error_response(404, "unknown_split", "no split '" + split + "'");

  std::uint64_t offset = 0, limit = kDefaultRowsPerPage;
  if (auto s = single(params, "offset")) {
    auto v = parse_u64(*s);
    if (!v) return error_response(400, "bad_request", "offset must be a non-negative integer");
    offset = *v;
  }
  if (auto s = single(params, "limit")) {
    auto v = parse_u64(*s);
    if (!v || *v == 0 || *v > kMaxRowsPerPage) {
      return error_response(400, "bad_request", "limit must be an integer in [1, " + std::to_string(kMaxRowsPerPage) + "]");
    }
    limit = *v;
  }
  const auto total = table->second.num_rows();
  if (offset > total) return error_response(400, "bad_request", "offset is past the end of the split");
  const auto end = std::min(total, offset + limit);
  const auto& schema = table->second.schema();
  json rows = json::array();
  for (const auto& row : table->second.slice(offset, end)) rows.push_back(row_to_json(schema, row));
  return {200, json{{"dataset", id}, {"split", split}, {"offset", offset}, {"limit", limit}, {"total", total},
                    {"rows", std::move(rows)}}};
}

ApiResponse Api::card(const std::string& id) const {
  auto text = registry_.card_text(id);
  if (!text) return error_response(404, "no_card", "dataset '" + id + "' has no data card");
  json out{{"id", id}, {"revision", registry_.entry(id).card_revision}, {"markdown", *text}};
  try {
    auto card = parse_card(*text);
    json tags = json::object();
    for (const auto& [k, v] : card.tags) tags[k] = v;
    out["tags"] = std::move(tags);
    json sections = json::array();
    for (const auto& s : card.sections) sections.push_back({{"level", s.level}, {"title", s.title}});
    out["sections"] = std::move(sections);
    auto it = built_.find(id);
    json findings = json::array();
    for (const auto& f : validate_card(card, registry_.vocabulary(), it == built_.end() ? nullptr : &it->second.info)) {
      findings.push_back(f.to_json());
    }
    out["findings"] = std::move(findings);
  } catch (const Error& e) {
    out["tags"] = json::object();
    out["sections"] = json::array();
    out["findings"] = json::array({{{"severity", "error"}, {"kind", error_code_name(e.code())}, {"message", e.what()}}});
  }
  return {200, std::move(out)};
}

ApiResponse Api::search(const Params& params) const {
  TagFilter filter;
  for (const auto& [k, v] : params) {
    auto key = search_params().find(k);
    if (key == search_params().end()) return error_response(400, "bad_request", "unknown search parameter '" + k + "'");
    auto& values = filter[key->second];
    std::size_t start = 0;
    while (start <= v.size()) {
      auto comma = v.find(',', start);
      auto item = v.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!item.empty()) values.push_back(item);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  try {
    return {200, registry_.search(filter)};
  } catch (const Error& e) {
    return error_response(400, std::string(error_code_name(e.code())), e.what());
  }
}

struct Server::Impl {
  httplib::Server http;
  std::shared_ptr<const Api> api;
  std::thread thread;
};

Server::Server(std::shared_ptr<const Api> api, const ServeOptions& options) : impl_(std::make_unique<Impl>()) {
  impl_->api = std::move(api);
  auto& http = impl_->http;
  // SO_REUSEPORT (the library default) would let a second server share the port.
  http.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  http.set_default_headers({{"Access-Control-Allow-Origin", options.cors_origin},
                            {"Access-Control-Allow-Methods", "GET, OPTIONS"},
                            {"Access-Control-Allow-Headers", "Content-Type"}});
  auto send = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  const Api* api_ptr = impl_->api.get();
  http.Get("/api/.*", [api_ptr, send](const httplib::Request& req, httplib::Response& res) {
    Params params(req.params.begin(), req.params.end());
    try {
      send(res, api_ptr->get(req.path, params));
    } catch (const std::exception& e) {
      send(res, error_response(500, "internal", e.what()));
    }
  });
  http.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  auto not_allowed = [send](const httplib::Request&, httplib::Response& res) {
    send(res, error_response(405, "method_not_allowed"));
  };
  http.Post(".*", not_allowed);
  http.Put(".*", not_allowed);
  http.Patch(".*", not_allowed);
  http.Delete(".*", not_allowed);
  if (options.static_dir) http.set_mount_point("/", options.static_dir->string());
  http.set_error_handler([send](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send(res, error_response(res.status, res.status == 404 ? "not_found" : "error"));
  });
}

Server::~Server() { stop(); }

int Server::bind(const std::string& host, int port) {
  if (port == 0) {
    port_ = impl_->http.bind_to_any_port(host);
    if (port_ < 0) fail(ErrorCode::kPortInUse, "cannot bind " + host);
  } else {
    if (!impl_->http.bind_to_port(host, port)) {
      fail(ErrorCode::kPortInUse, "cannot bind " + host + ":" + std::to_string(port));
    }
    port_ = port;
  }
  return port_;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::start() {
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
}

void Server::stop() {
  if (!impl_) return;
  impl_->http.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace dataforge

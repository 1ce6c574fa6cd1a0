#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "dataforge/builder.hpp"
#include "dataforge/registry.hpp"
#include "dataforge/store.hpp"

namespace dataforge {

inline constexpr std::uint64_t kMaxRowsPerPage = 1'000;
inline constexpr std::uint64_t kDefaultRowsPerPage = 100;

struct ServeOptions {
  /// Build datasets missing from the cache before serving. Requests never
  /// write to the cache or the registry.
  bool build_missing = true;
  std::string cors_origin = "*";
  /// Viewer assets mounted under "/" when set.
  std::optional<std::filesystem::path> static_dir;
  DownloadOptions download;
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// Registry and built datasets loaded once, then answered read-only.
class Api {
 public:
  Api(Registry registry, std::filesystem::path cache_dir, const ServeOptions& options = {});

  /// Routes a GET. `params` holds the query string, repeated keys kept.
  ApiResponse get(const std::string& path, const std::multimap<std::string, std::string>& params = {}) const;

  const Registry& registry() const { return registry_; }
  /// Problems met while loading (failed builds, card findings).
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  ApiResponse list() const;
  ApiResponse dataset(const std::string& id) const;
  ApiResponse rows(const std::string& id, const std::multimap<std::string, std::string>& params) const;
  ApiResponse card(const std::string& id) const;
  ApiResponse search(const std::multimap<std::string, std::string>& params) const;
  nlohmann::json summary(const std::string& id) const;

  Registry registry_;
  std::filesystem::path cache_dir_;
  std::map<std::string, DatasetDict> built_;
  std::vector<std::string> warnings_;
};

/// HTTP front end for Api.
class Server {
 public:
  Server(std::shared_ptr<const Api> api, const ServeOptions& options = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Port 0 picks a free one. Returns the bound port. Throws kPortInUse.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  /// Serves on a background thread.
  void start();
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace dataforge

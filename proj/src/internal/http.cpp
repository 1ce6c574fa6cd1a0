#include "internal/http.hpp"

#include "dataforge/error.hpp"

namespace dataforge::detail {

std::pair<std::string, std::string> split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) fail(ErrorCode::kInvalidArgument, "not a URL: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::unique_ptr<httplib::Client> make_client(const std::string& origin) {
  auto client = std::make_unique<httplib::Client>(origin);
  client->set_follow_location(true);
  client->set_connection_timeout(10);
  client->set_read_timeout(60);
  return client;
}

std::string user_agent() { return std::string("dataforge/") + DATAFORGE_VERSION; }

}  // namespace dataforge::detail

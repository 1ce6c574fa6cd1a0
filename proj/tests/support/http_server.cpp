#include "support/http_server.hpp"

#include "httplib.h"

namespace dataforge::testing {

StaticHttpServer::StaticHttpServer() : server_(std::make_unique<httplib::Server>()) {
  server_->Get(".*", [this](const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(mu_);
    auto it = entries_.find(req.path);
    if (it == entries_.end()) {
      res.status = 404;
      return;
    }
    auto& e = it->second;
    ++e.hits;
    if (e.hits <= e.fail_first) {
      res.status = 503;
      return;
    }
    res.set_content(e.body, "application/octet-stream");
  });
  port_ = server_->bind_to_any_port("127.0.0.1");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

StaticHttpServer::~StaticHttpServer() {
  server_->stop();
  thread_.join();
}

void StaticHttpServer::put(const std::string& path, std::string body, int fail_first) {
  std::lock_guard lock(mu_);
  entries_[path] = Entry{std::move(body), fail_first, 0};
}

std::string StaticHttpServer::url(const std::string& path) const {
  return "http://127.0.0.1:" + std::to_string(port_) + path;
}

int StaticHttpServer::requests(const std::string& path) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(path);
  return it == entries_.end() ? 0 : it->second.hits;
}

}  // namespace dataforge::testing

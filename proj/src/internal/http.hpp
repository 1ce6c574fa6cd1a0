#pragma once

#include <memory>
#include <string>
#include <utility>

#include "httplib.h"

namespace dataforge::detail {

/// "https://host:8443/a/b?c" -> {"https://host:8443", "/a/b?c"}.
std::pair<std::string, std::string> split_url(const std::string& url);

std::unique_ptr<httplib::Client> make_client(const std::string& origin);

std::string user_agent();

}  // namespace dataforge::detail

#include "support/temp_dir.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "dataforge/hash.hpp"

namespace dataforge::testing {

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          ("dataforge-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++) + "-" + std::to_string(rd()));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace dataforge::testing

namespace dataforge::testing {

std::string tree_digest(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& f : files) {
    h.update_framed(fs::relative(f, root).string());
    if (!fs::is_regular_file(f)) continue;
    h.update_u64(static_cast<std::uint64_t>(fs::last_write_time(f).time_since_epoch().count()));
    std::ifstream in(f, std::ios::binary);
    std::string bytes{std::istreambuf_iterator<char>(in), {}};
    h.update_framed(bytes);
  }
  return Fingerprint(h.finish()).hex();
}

}  // namespace dataforge::testing

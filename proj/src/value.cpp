#include "dataforge/value.hpp"

#include <bit>

namespace dataforge {

const char* Value::kind_name() const {
  static constexpr const char* kNames[] = {"null", "integer", "float", "bool", "text", "bytes", "list", "map"};
  return kNames[v_.index()];
}

bool operator==(const Value& a, const Value& b) {
  if (a.v_.index() != b.v_.index()) return false;
  if (a.is_float()) {
    return std::bit_cast<std::uint64_t>(a.as_float()) == std::bit_cast<std::uint64_t>(b.as_float());
  }
  return a.v_ == b.v_;
}

}  // namespace dataforge

#include "dataforge/kernels.hpp"

namespace dataforge::kernels {
namespace {

constexpr std::size_t kLanes = 8;

// Lane i holds acc[i] + acc[i + 4]; then pairs (0,2), (1,3); then the two
// halves. This is the order the AVX2 horizontal sum uses.
float reduce_lanes(const float (&acc)[kLanes]) {
  float t[4];
  for (int i = 0; i < 4; ++i) t[i] = acc[i] + acc[i + 4];
  float u0 = t[0] + t[2];
  float u1 = t[1] + t[3];
  return u0 + u1;
}

float dot_scalar(const float* a, const float* b, std::size_t n) {
  float acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] = acc[l] + a[i + l] * b[i + l];
  }
  for (std::size_t l = 0; l < kLanes; ++l) {
    float x = i + l < n ? a[i + l] : 0.0f;
    float y = i + l < n ? b[i + l] : 0.0f;
    acc[l] = acc[l] + x * y;
  }
  return reduce_lanes(acc);
}

float l2sq_scalar(const float* a, const float* b, std::size_t n) {
  float acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) {
      float d = a[i + l] - b[i + l];
      acc[l] = acc[l] + d * d;
    }
  }
  for (std::size_t l = 0; l < kLanes; ++l) {
    float x = i + l < n ? a[i + l] : 0.0f;
    float y = i + l < n ? b[i + l] : 0.0f;
    float d = x - y;
    acc[l] = acc[l] + d * d;
  }
  return reduce_lanes(acc);
}

std::int64_t sum_i64_scalar(const std::int64_t* v, std::size_t n) {
  std::uint64_t acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<std::uint64_t>(v[i]);
  return static_cast<std::int64_t>(acc);
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::kScalar, dot_scalar, l2sq_scalar, sum_i64_scalar};
  return table;
}

}  // namespace dataforge::kernels

#pragma once

// Numeric inner loops with a scalar reference and an AVX2 variant chosen at
// runtime. Both variants accumulate float sums in 8 interleaved lanes and
// reduce them with the same tree, and neither contracts to FMA, so results
// are bit-identical across variants.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

namespace dataforge::kernels {

enum class Isa { kScalar, kAvx2 };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  float (*dot_f32)(const float* a, const float* b, std::size_t n);
  float (*l2sq_f32)(const float* a, const float* b, std::size_t n);
  /// Wrapping two's-complement sum.
  std::int64_t (*sum_i64)(const std::int64_t* v, std::size_t n);
};

const KernelTable& scalar_table();
/// nullptr when not compiled in or the CPU lacks AVX2.
const KernelTable* avx2_table();

/// Best available table; `DATAFORGE_SIMD=scalar` forces the reference path.
const KernelTable& active();

inline float dot(std::span<const float> a, std::span<const float> b) {
  return active().dot_f32(a.data(), b.data(), a.size());
}
inline float l2sq(std::span<const float> a, std::span<const float> b) {
  return active().l2sq_f32(a.data(), b.data(), a.size());
}
inline std::int64_t sum(std::span<const std::int64_t> v) { return active().sum_i64(v.data(), v.size()); }

}  // namespace dataforge::kernels

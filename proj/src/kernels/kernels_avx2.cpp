#include "dataforge/kernels.hpp"

#if defined(__AVX2__)
#include <immintrin.h>

namespace dataforge::kernels {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);            // acc[i] + acc[i + 4]
  __m128 shuf = _mm_movehl_ps(s, s);        // [s2, s3, s2, s3]
  __m128 pairs = _mm_add_ps(s, shuf);       // [s0 + s2, s1 + s3, ...]
  __m128 odd = _mm_shuffle_ps(pairs, pairs, 0x55);
  return _mm_cvtss_f32(_mm_add_ss(pairs, odd));
}

inline __m256i tail_mask(std::size_t remaining) {
  alignas(32) static const std::int32_t kMask[16] = {-1, -1, -1, -1, -1, -1, -1, -1, 0, 0, 0, 0, 0, 0, 0, 0};
  return _mm256_loadu_si256(reinterpret_cast<const __m256i*>(kMask + 8 - remaining));
}

float dot_avx2(const float* a, const float* b, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc = _mm256_add_ps(acc, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  __m256i mask = tail_mask(n - i);
  __m256 x = _mm256_maskload_ps(a + i, mask);
  __m256 y = _mm256_maskload_ps(b + i, mask);
  acc = _mm256_add_ps(acc, _mm256_mul_ps(x, y));
  return hsum(acc);
}

float l2sq_avx2(const float* a, const float* b, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
    acc = _mm256_add_ps(acc, _mm256_mul_ps(d, d));
  }
  __m256i mask = tail_mask(n - i);
  __m256 d = _mm256_sub_ps(_mm256_maskload_ps(a + i, mask), _mm256_maskload_ps(b + i, mask));
  acc = _mm256_add_ps(acc, _mm256_mul_ps(d, d));
  return hsum(acc);
}

std::int64_t sum_i64_avx2(const std::int64_t* v, std::size_t n) {
  __m256i acc = _mm256_setzero_si256();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_epi64(acc, _mm256_loadu_si256(reinterpret_cast<const __m256i*>(v + i)));
  }
  alignas(32) std::uint64_t lanes[4];
  _mm256_store_si256(reinterpret_cast<__m256i*>(lanes), acc);
  std::uint64_t total = lanes[0] + lanes[1] + lanes[2] + lanes[3];
  for (; i < n; ++i) total += static_cast<std::uint64_t>(v[i]);
  return static_cast<std::int64_t>(total);
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{Isa::kAvx2, dot_avx2, l2sq_avx2, sum_i64_avx2};
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &table : nullptr;
}

}  // namespace dataforge::kernels

#else

namespace dataforge::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace dataforge::kernels

#endif

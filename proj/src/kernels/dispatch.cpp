#include <cstdlib>
#include <string>

#include "dataforge/kernels.hpp"

namespace dataforge::kernels {

std::string_view isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

const KernelTable& active() {
  static const KernelTable& chosen = [] () -> const KernelTable& {
    const char* env = std::getenv("DATAFORGE_SIMD");
    if (env != nullptr && std::string(env) == "scalar") return scalar_table();
    if (const auto* t = avx2_table()) return *t;
    return scalar_table();
  }();
  return chosen;
}

}  // namespace dataforge::kernels

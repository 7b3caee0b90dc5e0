#include "massub/kernels.hpp"

#include <cstdlib>
#include <string_view>

namespace massub::kernels {

#if !defined(MASSUB_HAVE_AVX2_TU)
const KernelTable* avx2_table() noexcept { return nullptr; }
#endif

#if !defined(MASSUB_HAVE_NEON_TU)
const KernelTable* neon_table() noexcept { return nullptr; }
#endif

const KernelTable& active() noexcept {
  static const KernelTable* chosen = [] {
    if (const char* forced = std::getenv("MASSUB_KERNELS");
        forced != nullptr && std::string_view(forced) == "scalar") {
      return &scalar_table();
    }
    if (const KernelTable* t = avx2_table()) return t;
    if (const KernelTable* t = neon_table()) return t;
    return &scalar_table();
  }();
  return *chosen;
}

}  // namespace massub::kernels

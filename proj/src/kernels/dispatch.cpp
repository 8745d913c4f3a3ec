#include <cstdlib>
#include <string>

#include "rrhf/kernels/kernels.hpp"

namespace rrhf::kernels {

#if defined(RRHF_HAVE_AVX2)
const KernelTable* avx2_table_impl();
#endif

const KernelTable* avx2_table() {
#if defined(RRHF_HAVE_AVX2)
  return avx2_table_impl();
#else
  return nullptr;
#endif
}

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable* pick(std::string_view name) {
  if (name == "scalar") return &scalar_table();
  const bool avx2_ok = avx2_table() != nullptr && cpu_has_avx2_fma();
  if (name == "avx2") return avx2_ok ? avx2_table() : nullptr;
  if (name == "auto" || name.empty()) return avx2_ok ? avx2_table() : &scalar_table();
  return nullptr;
}

const KernelTable*& current() {
  static const KernelTable* table = [] {
    const char* env = std::getenv("RRHF_KERNELS");
    const KernelTable* t = pick(env ? std::string_view(env) : std::string_view("auto"));
    return t ? t : &scalar_table();
  }();
  return table;
}

}  // namespace

const KernelTable& active() { return *current(); }

bool select(std::string_view name) {
  const KernelTable* t = pick(name);
  if (!t) return false;
  current() = t;
  return true;
}

}  // namespace rrhf::kernels

#include "balpol/simd.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace balpol::simd {
namespace {

bool cpu_has_avx2_fma() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const Backend* lookup(std::string_view name) {
  if (name == "scalar") return &kScalarBackend;
#if defined(__x86_64__) || defined(_M_X64)
  if (name == "avx2" && cpu_has_avx2_fma()) return &kAvx2Backend;
#endif
  return nullptr;
}

const Backend* initial_backend() {
  if (const char* env = std::getenv("BALPOL_SIMD")) {
    if (const Backend* b = lookup(env)) return b;
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (cpu_has_avx2_fma()) return &kAvx2Backend;
#endif
  return &kScalarBackend;
}

std::atomic<const Backend*>& slot() {
  static std::atomic<const Backend*> s{initial_backend()};
  return s;
}

}  // namespace

const Backend& active() { return *slot().load(std::memory_order_relaxed); }

bool set_backend(std::string_view name) {
  const Backend* b = lookup(name);
  if (!b) return false;
  slot().store(b, std::memory_order_relaxed);
  return true;
}

}  // namespace balpol::simd

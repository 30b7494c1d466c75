#pragma once

#include <cstddef>
#include <string_view>

// Runtime-dispatched vector kernels. Every hot inner loop in the library
// (Gram matrices, QP matvecs, factorization update rows, Monte Carlo
// reductions) funnels through these entry points. A scalar reference
// implementation is always available; on x86-64 an AVX2+FMA variant is
// selected at startup when the CPU supports it. The two backends agree to
// rounding (FMA reassociates sums), not bit-exactly; tests pin the
// tolerance.
namespace balpol::simd {

struct Backend {
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sqdist)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
};

extern const Backend kScalarBackend;
#if defined(__x86_64__) || defined(_M_X64)
extern const Backend kAvx2Backend;
#endif

// Active backend. Chosen once: BALPOL_SIMD env var ("scalar"/"avx2") if set,
// otherwise the widest the CPU supports.
const Backend& active();

// Force a backend by name; returns false (and leaves the selection alone)
// if the name is unknown or unsupported on this CPU.
bool set_backend(std::string_view name);

inline double dot(const double* a, const double* b, std::size_t n) {
  return active().dot(a, b, n);
}
inline double sqdist(const double* a, const double* b, std::size_t n) {
  return active().sqdist(a, b, n);
}
inline double sum(const double* a, std::size_t n) { return active().sum(a, n); }
inline void axpy(std::size_t n, double alpha, const double* x, double* y) {
  active().axpy(n, alpha, x, y);
}

}  // namespace balpol::simd

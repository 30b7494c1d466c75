#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace balpol {

// Deterministic RNG wrapper. Distribution transforms are implemented here
// (not via std:: distributions, whose outputs are implementation-defined),
// so a seed pins the stream across compilers and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // [0, 1)
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal, Box-Muller
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // index into probs by inverse CDF; probs need not be exactly normalized
  int categorical(std::span<const double> probs) {
    double total = 0.0;
    for (double p : probs) total += p;
    double u = uniform() * total;
    for (std::size_t t = 0; t + 1 < probs.size(); ++t) {
      u -= probs[t];
      if (u < 0.0) return static_cast<int>(t);
    }
    return static_cast<int>(probs.size()) - 1;
  }

  int uniform_int(int n) {  // 0..n-1
    return static_cast<int>(uniform() * n) % n;
  }

  std::uint64_t raw() { return eng_(); }

  // Derive an independent substream seed (splitmix64 over seed ^ stream tag).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace balpol

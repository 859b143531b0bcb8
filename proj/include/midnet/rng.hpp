// Seeded random streams with explicit sampling routines.
//
// std::mt19937_64 supplies the raw bits; all distributions are implemented
// here so that sequences are reproducible across standard libraries.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace midnet {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  // Independent stream derived from this one's seed.
  Rng fork(std::uint64_t stream) const { return Rng(splitmix64(seed_ ^ (stream + 0x632BE59BD9B4E019ULL))); }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::int64_t uniform_int(std::int64_t n) {
    if (n <= 0) throw std::invalid_argument("rng: uniform_int needs n > 0");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % un;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return static_cast<std::int64_t>(r % un);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; draws two uniforms per call (no cached spare).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Marsaglia-Tsang, extended below k = 1 by the boost transform.
  double gamma(double k) {
    if (k <= 0.0) throw std::invalid_argument("rng: gamma needs k > 0");
    if (k < 1.0) {
      const double u = uniform();
      return gamma(k + 1.0) * std::pow(u, 1.0 / k);
    }
    const double d = k - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  // Fisher-Yates.
  template <typename V>
  void shuffle(V& values) {
    for (std::int64_t i = static_cast<std::int64_t>(values.size()) - 1; i > 0; --i) {
      const std::int64_t j = uniform_int(i + 1);
      std::swap(values[static_cast<std::size_t>(i)], values[static_cast<std::size_t>(j)]);
    }
  }

  std::vector<std::int64_t> permutation(std::int64_t n) {
    std::vector<std::int64_t> p(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    shuffle(p);
    return p;
  }

  // Permutation of [0, n) with no guarantee beyond not being the identity
  // (n > 1). Identity draws are rejected and redrawn.
  std::vector<std::int64_t> non_identity_permutation(std::int64_t n) {
    if (n <= 1) return permutation(n);
    for (;;) {
      auto p = permutation(n);
      for (std::int64_t i = 0; i < n; ++i)
        if (p[static_cast<std::size_t>(i)] != i) return p;
    }
  }

  // Engine state as text, for checkpointing.
  std::string state() const {
    std::ostringstream os;
    os << seed_ << " " << gen_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    if (!(is >> seed_ >> gen_)) throw std::runtime_error("rng: cannot restore engine state");
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace midnet

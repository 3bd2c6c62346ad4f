#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace qdfm {

// Deterministic random stream. All randomness in the project flows through
// this wrapper so that results are reproducible bit-for-bit from a root seed:
// the raw mt19937_64 output is mapped to doubles/integers here instead of via
// std::*_distribution, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Named substream derived from a root seed. Streams with different names or
  // indices are independent; the same (root, name, index) always yields the
  // same stream.
  static Rng stream(std::uint64_t root_seed, std::string_view name,
                    std::uint64_t index = 0) {
    std::uint64_t h = fnv1a(name);
    std::seed_seq seq{static_cast<std::uint32_t>(root_seed),
                      static_cast<std::uint32_t>(root_seed >> 32),
                      static_cast<std::uint32_t>(h),
                      static_cast<std::uint32_t>(h >> 32),
                      static_cast<std::uint32_t>(index),
                      static_cast<std::uint32_t>(index >> 32)};
    Rng r(0);
    r.gen_.seed(seq);
    return r;
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Multiply-shift map; bias is < 2^-64.
  std::size_t uniform_below(std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below: n must be > 0");
    using u128 = unsigned __int128;
    return static_cast<std::size_t>((static_cast<u128>(next_u64()) * n) >> 64);
  }

  // Categorical draw by inverse CDF over index order with a single uniform.
  // Weights need not be normalized.
  std::size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw std::invalid_argument("categorical: negative or NaN weight");
      total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("categorical: all weights zero");
    double u = uniform() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      acc += weights[i];
      last_positive = i;
      if (u < acc) return i;
    }
    return last_positive;  // u landed on the rounding edge
  }

  // Uniform point on the (k-1)-simplex: symmetric Dirichlet(1) via
  // normalized exponentials.
  std::vector<double> simplex(std::size_t k) {
    if (k == 0) throw std::invalid_argument("simplex: k must be > 0");
    std::vector<double> x(k);
    double sum = 0.0;
    for (auto& v : x) {
      v = -std::log1p(-uniform());
      sum += v;
    }
    if (sum <= 0.0) {
      for (auto& v : x) v = 1.0 / static_cast<double>(k);
      return x;
    }
    for (auto& v : x) v /= sum;
    return x;
  }

 private:
  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return h;
  }

  std::mt19937_64 gen_;
};

}  // namespace qdfm

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "dsam/tensor.hpp"

namespace dsam {

/// Deterministic normal/uniform generator. Box-Muller on top of mt19937_64 so
/// the stream is bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform() {
    // strictly inside (0,1)
    return (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  /// Uniform integer in [0, n).
  std::size_t uniform_int(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  std::uint64_t raw() { return gen_(); }

  Tensor normal_tensor(Shape shape, double mean = 0.0, double std = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = mean + std * normal();
    return t;
  }

  Tensor uniform_tensor(Shape shape, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * uniform();
    return t;
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Derives independent named substreams from one experiment seed, so path
/// noise, component draws, MALA, and evaluation can be varied independently.
class RngPool {
 public:
  explicit RngPool(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  Rng stream(std::string_view name, std::uint64_t index = 0) const {
    return Rng(mix(seed_, name, index));
  }

  static std::uint64_t mix(std::uint64_t seed, std::string_view name, std::uint64_t index) {
    // FNV-1a over the name, then splitmix64 finalization.
    std::uint64_t h = 1469598103934665603ull ^ seed;
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    h ^= index + 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
  }

 private:
  std::uint64_t seed_;
};

}  // namespace dsam

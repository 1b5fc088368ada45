#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace afa {

// Deterministic tree of named random streams grown from one 64-bit seed.
// Children derive from the parent's seed and a tag, never from the parent's
// draw position, so extra draws in one component cannot perturb another.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t seed) : seed_(seed), engine_(mix(seed)) {}

  SplitRng split(std::string_view tag) const {
    return SplitRng(mix(seed_ ^ fnv1a(tag)));
  }
  SplitRng split(std::string_view tag, std::uint64_t index) const {
    return SplitRng(mix(mix(seed_ ^ fnv1a(tag)) + index));
  }

  std::mt19937_64& engine() { return engine_; }
  std::uint64_t seed() const { return seed_; }

  double uniform() {
    return std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }
  double gaussian() {
    return std::normal_distribution<double>(0.0, 1.0)(engine_);
  }
  // inclusive bounds
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
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
  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace afa

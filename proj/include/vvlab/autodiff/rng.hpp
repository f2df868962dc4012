#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

namespace vvlab {

// Mixes a base seed with stream coordinates (splitmix64 finalizer), so that
// e.g. per-prompt sampling streams do not depend on processing order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// Seeded generator with platform-independent draws built directly on the
// raw 64-bit engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Standard normal (Box-Muller).
  double normal();
  // Uniform integer on [0, n).
  std::size_t below(std::size_t n);
  // Index drawn with probability proportional to weights[i].
  std::size_t categorical(std::span<const double> weights);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(last - first);
    for (std::size_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vvlab

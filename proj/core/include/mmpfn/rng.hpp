#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace mmpfn {

// Counter-based SplitMix64 stream. Draw i of a stream seeded with s is
// mix64(s + (i + 1) * 0x9E3779B97F4A7C15), where mix64 is the SplitMix64
// finalizer. Any language with 64-bit wrapping arithmetic reproduces the
// exact same sequence; see README "Random streams".
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : seed_(seed) {}

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n) noexcept;
  // Uniform integer in [lo, hi] inclusive.
  std::size_t between(std::size_t lo, std::size_t hi) noexcept;
  // Standard normal via Box-Muller; consumes two draws per call.
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z) noexcept;

// Child seed for an independent stream, e.g. derive_seed(run_seed, step).
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) noexcept;

std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace mmpfn

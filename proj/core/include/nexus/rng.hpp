#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace nexus {

// Seeded generator used wherever the toolkit needs randomness. The raw bit
// stream is std::mt19937_64, whose output sequence is pinned by the C++
// standard and therefore identical on every platform. The uniform and normal
// transforms are implemented here instead of using <random> distributions,
// whose results are implementation-defined. normal() uses the Marsaglia
// polar method, so its values are reproducible up to the platform's log/sqrt.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform double in [0, 1) with 53-bit resolution.
  double uniform();

  // Standard normal deviate.
  double normal();

  // Uniform integer in [0, n). Unbiased (rejection sampling). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  // Independent child stream. Children with distinct stream ids never share
  // state with the parent or each other.
  Rng derive(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

  // In-place Fisher-Yates shuffle driven by below().
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nexus

#pragma once

// Deterministic RNG streams.
//
// Every random draw in the project comes from a named, fully specified
// generator so a run is reproducible from its seed alone:
//   - stream seeds are derived with splitmix64 finalization steps,
//   - draws come from std::mt19937_64 (bit-exact per the C++ standard),
//   - bounded ints and unit doubles use the fixed mappings below, never
//     std::uniform_*_distribution (whose output is implementation-defined).
//
// Stream derivation: seed_for(root, purpose, a, b) folds each component into
// the state with one splitmix64 step. Purposes keep unrelated consumers
// (dataset targets, rollout, eval, ...) on disjoint streams.

#include <cstdint>
#include <random>

namespace recast {

// Stream purposes. Values are part of the reproducibility contract.
enum class RngPurpose : std::uint64_t {
  dataset_target = 1,
  prompt_select = 2,
  rollout = 3,
  eval = 4,
  policy_init = 5,
};

constexpr std::uint64_t splitmix64_step(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t seed_for(std::uint64_t root, RngPurpose purpose,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t s = splitmix64_step(root);
  s = splitmix64_step(s ^ static_cast<std::uint64_t>(purpose));
  s = splitmix64_step(s ^ a);
  s = splitmix64_step(s ^ b);
  return s;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t next_index(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t threshold = (0ULL - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace recast

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace unidd {

// Deterministic random source. The engine is std::mt19937_64 (its output
// sequence is pinned by the standard); the uniform/normal mappings below are
// spelled out explicitly so that identical seeds give bit-identical streams on
// every platform, which std::*_distribution does not guarantee.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Independent named substream of a run seed. Lets one run seed drive
  // several consumers (init sampling, optimizer, ...) without interleaving.
  static Rng stream(std::uint64_t seed, std::string_view name);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal();

  // Uniform index in [0, n) by rejection, bias-free.
  std::size_t index(std::size_t n);

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// FNV-1a, used for stream derivation and config hashing.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

// splitmix64 finalizer; decorrelates related seeds.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace unidd

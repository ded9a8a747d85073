#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mmg {

// Deterministic random source. std::mt19937_64 has a portable bit stream,
// the standard distributions do not, so all distributions are hand-rolled
// here. Two runs with the same seed produce bit-identical sequences on any
// platform.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform();

  // Standard normal via Box-Muller; one cached spare per pair.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n);

  // Derive an independent stream from (this seed, label). Forking does not
  // advance this generator's state.
  Rng fork(std::string_view label) const;
  Rng fork(std::string_view label, uint64_t index) const;

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t state_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// FNV-1a over arbitrary bytes; used for content hashes and rng forking.
uint64_t fnv1a64(const void* data, size_t len, uint64_t basis = 0xcbf29ce484222325ull);
std::string hash_hex(uint64_t h);

}  // namespace mmg

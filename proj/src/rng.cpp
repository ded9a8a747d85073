#include "mmg/rng.hpp"

#include <cmath>
#include <cstring>

#include "mmg/errors.hpp"

namespace mmg {

namespace {

// splitmix64, used for seeding and stream derivation.
uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) : seed_(seed) {
  // xoshiro256** state expanded from the seed.
  uint64_t s = seed;
  for (auto& w : state_) w = splitmix64(s);
}

uint64_t Rng::next_u64() {
  const uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw ConfigError("uniform_int: n must be positive, got " + std::to_string(n));
  // Rejection sampling over the top bits to avoid modulo bias.
  const uint64_t un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return static_cast<int>(v % un);
}

Rng Rng::fork(std::string_view label) const {
  uint64_t h = fnv1a64(label.data(), label.size(), seed_ ^ 0xcbf29ce484222325ull);
  return Rng(h);
}

Rng Rng::fork(std::string_view label, uint64_t index) const {
  uint64_t h = fnv1a64(label.data(), label.size(), seed_ ^ 0xcbf29ce484222325ull);
  h = fnv1a64(&index, sizeof(index), h);
  return Rng(h);
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t basis) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = basis;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace mmg

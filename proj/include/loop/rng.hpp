#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace loop {

// Deterministic PRNG with named sub-streams. All randomness in a run flows
// from one root seed; consumers get independent streams keyed by a stable
// string name, so adding a new consumer never shifts another stream.
//
// Distributions are hand-rolled (Lemire reduction, Box-Muller) instead of
// <random> distributions so output bytes are stable across libstdc++
// versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix(seed + 0x9e3779b97f4a7c15ull)) {}

  Rng(uint64_t root_seed, std::string_view stream) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the stream name
    for (char c : stream) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001b3ull;
    }
    state_ = splitmix(root_seed ^ h);
    if (state_ == 0) state_ = 0x853c49e6748fea9bull;
  }

  Rng stream(std::string_view name) const {
    Rng r(0);
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : name) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001b3ull;
    }
    r.state_ = splitmix(state_ ^ h);
    if (r.state_ == 0) r.state_ = 0x853c49e6748fea9bull;
    return r;
  }

  uint64_t next_u64() {
    // xorshift64* step
    uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // Uniform integer in [0, n), n > 0.
  uint64_t next_below(uint64_t n) {
    // Lemire's multiply-shift with rejection
    uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    uint64_t lo = static_cast<uint64_t>(m);
    if (lo < n) {
      uint64_t t = (0 - n) % n;
      while (lo < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<uint64_t>(m);
      }
    }
    return static_cast<uint64_t>(m >> 64);
  }

  int next_int(int lo, int hi) {  // inclusive range [lo, hi]
    return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo + 1)));
  }

  double next_double() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0, u2 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 1e-300);
    u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <class Vec>
  void shuffle(Vec& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = next_below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  uint64_t state_ = 0x853c49e6748fea9bull;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace loop

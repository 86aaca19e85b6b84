#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gs {

enum class ErrorKind {
  invalid_argument,
  parse,
  version,
  validation,
  check_failure,
  runtime_abort,
};

struct Error : std::runtime_error {
  ErrorKind kind;
  Error(ErrorKind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

[[noreturn]] inline void fail(ErrorKind k, const std::string& msg) { throw Error(k, msg); }

// Counter-based RNG: every draw is addressed by explicit indices instead of
// mutating stream state, so parallel consumers and reruns agree bit for bit.
namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(a) ^ (b + 0x9E3779B97F4A7C15ull));
}

struct Stream {
  std::uint64_t key;

  explicit Stream(std::uint64_t seed) : key(splitmix64(seed)) {}
  Stream(std::uint64_t seed, std::uint64_t s0) : key(mix(splitmix64(seed), s0)) {}
  Stream(std::uint64_t seed, std::uint64_t s0, std::uint64_t s1)
      : key(mix(mix(splitmix64(seed), s0), s1)) {}
  Stream(std::uint64_t seed, std::uint64_t s0, std::uint64_t s1, std::uint64_t s2)
      : key(mix(mix(mix(splitmix64(seed), s0), s1), s2)) {}

  Stream sub(std::uint64_t s) const {
    Stream out(*this);
    out.key = mix(key, s);
    return out;
  }

  std::uint64_t bits(std::uint64_t i) const { return splitmix64(key ^ splitmix64(i + 0x632BE59BD9B4E019ull)); }

  // in [0,1)
  double uniform(std::uint64_t i) const { return double(bits(i) >> 11) * 0x1.0p-53; }

  double uniform(std::uint64_t i, double lo, double hi) const { return lo + uniform(i) * (hi - lo); }

  double normal(std::uint64_t i) const {
    double u1 = uniform(2 * i);
    double u2 = uniform(2 * i + 1);
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }
};

}  // namespace rng

// FNV-1a, used to stamp reports with a config fingerprint.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace gs

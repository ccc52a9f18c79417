#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace progrow {

// FNV-1a, used for stable hashing of names, configs and weights.
class Fnv1a {
 public:
  Fnv1a& update(const void* bytes, std::size_t n) {
    auto p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& update(std::string_view s) { return update(s.data(), s.size()); }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view s) { return Fnv1a{}.update(s).digest(); }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

using Rng = std::mt19937_64;

// Independent generator for a named purpose (and optional index) under a run
// seed. Every random consumer in the library draws from its own stream so that
// two runs sharing a seed see identical data order, augmentation and
// initialization regardless of what else they do.
inline Rng stream(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0) {
  std::uint64_t s = splitmix64(seed ^ splitmix64(fnv1a(purpose)));
  s = splitmix64(s ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  return Rng(s);
}

inline std::string to_hex(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) out[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return out;
}

}  // namespace progrow

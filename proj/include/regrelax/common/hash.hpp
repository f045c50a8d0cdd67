#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace regrelax {

// 64-bit FNV-1a; stable across platforms, used for record and checkpoint ids.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Per-run seed: independent of run order, so parallel runs stay reproducible.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view behavior_id,
                                 std::string_view method) {
  std::uint64_t h = fnv1a64(behavior_id);
  h = fnv1a64("/", h);
  h = fnv1a64(method, h);
  return mix64(master ^ mix64(h));
}

}  // namespace regrelax

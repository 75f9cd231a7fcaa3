#pragma once

#include <cstdint>
#include <initializer_list>

namespace jko {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stateless hash of a key tuple; the basis of the counter-based streams.
inline std::uint64_t hash_key(std::initializer_list<std::uint64_t> key) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (std::uint64_t k : key) {
    h = mix64(h ^ k);
  }
  return h;
}

/// Derives an independent seed for a named sub-stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) { return hash_key({seed, stream}); }

/// Counter-based Rademacher probes. A probe entry depends only on
/// (seed, sample, step, probe, coordinate), so results do not depend on batch
/// composition or evaluation order.
struct ProbeStream {
  std::uint64_t seed = 0;
  std::uint64_t first_sample = 0;  ///< global index of row 0 of the batch

  double sign(std::uint64_t row, std::uint64_t step, std::uint64_t probe, std::uint64_t coord) const {
    const std::uint64_t h = hash_key({seed, first_sample + row, step, probe, coord});
    return (h >> 63) != 0 ? 1.0 : -1.0;
  }
};

}  // namespace jko

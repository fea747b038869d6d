#pragma once

#include <cstdint>
#include <limits>

namespace lgn {

/// SplitMix64 generator. Cheap to construct, so a fresh stream can be opened
/// per (seed, step, node) without the seeding cost of a Mersenne twister.
/// Satisfies UniformRandomBitGenerator.
class SplitMix64 {
public:
  using result_type = std::uint64_t;

  constexpr explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double strictly inside (0,1), 53 bits of resolution.
  constexpr double open_unit() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

private:
  std::uint64_t state_;
};

[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  SplitMix64 g(a ^ (b * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
  g();
  return g();
}

/// Independent, replayable stream keyed by a tuple of ids.
[[nodiscard]] constexpr SplitMix64 keyed_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                                std::uint64_t c = 0) {
  return SplitMix64(mix64(mix64(mix64(seed, a), b), c));
}

// Stream tags keep the different consumers of a run seed disjoint.
namespace stream_tag {
inline constexpr std::uint64_t kTrainNoise = 1;
inline constexpr std::uint64_t kEvalNoise = 2;
inline constexpr std::uint64_t kBatch = 3;
inline constexpr std::uint64_t kInit = 4;
inline constexpr std::uint64_t kData = 5;
}  // namespace stream_tag

}  // namespace lgn

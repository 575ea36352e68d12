#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

namespace lvlab {

// Counter-based splittable random stream (splitmix64 core). All draws are
// hand-rolled so results are identical across compilers and standard
// libraries; std::* distributions are deliberately not used.
//
// Substreams: substream(seed, id) yields an independent stream for each id,
// which is how batches assign one stream per replicate.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) : state_(mix(seed + kGolden)) {}

  static Rng substream(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t s = mix(seed ^ mix(stream_id + 0x632be59bd9b4e019ULL));
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix(state_);
  }

  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() {
    return std::numeric_limits<std::uint64_t>::max();
  }
  std::uint64_t operator()() { return next_u64(); }

  // Uniform on [0,1), 53-bit resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on {0, 1, ..., n-1}, unbiased (rejection on the wraparound).
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Exponential with the given rate; rate must be > 0.
  double exponential(double rate) {
    return -std::log1p(-uniform01()) / rate;
  }

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  friend std::uint64_t derive_seed(std::uint64_t, std::uint64_t, std::uint64_t);

  std::uint64_t state_;
};

// Stable seed for a named sub-purpose of a master seed (graph build,
// replicate r, ...). Feeding the result to Rng or Rng::substream gives
// streams independent across (a, b) pairs.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b = 0) {
  std::uint64_t h = Rng::mix(seed ^ Rng::mix(a + 0x8e9fbc2a6f3d1c4bULL));
  return Rng::mix(h ^ Rng::mix(b + 0x1b873593a4093822ULL));
}

}  // namespace lvlab

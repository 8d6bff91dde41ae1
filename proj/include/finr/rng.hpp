#pragma once

#include <cstdint>

namespace finr {

// SplitMix64: tiny counter-based generator. The full generator state is the
// single u64 counter, which is what checkpoints persist; restoring it resumes
// the exact stream. Not cryptographic, chosen for reproducibility across
// platforms (pure integer arithmetic, no libm).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) {
    // Multiply-shift; bias is negligible for the n used here (< 2^32).
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

  // Independent stream for a named purpose, derived from this seed.
  Rng fork(std::uint64_t stream_id) const {
    Rng r(state_ ^ (0x632be59bd9b4e019ull * (stream_id + 1)));
    return r;
  }

 private:
  std::uint64_t state_;
};

}  // namespace finr

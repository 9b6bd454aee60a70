#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace posekit {

// Philox4x64-10 counter-based generator. Streams are keyed by a 128-bit key,
// which makes per-example substreams trivial: key = (seed, example index).
// Draws depend only on (key, counter), so any substream can be regenerated in
// isolation, in any order.
class Philox {
 public:
  using result_type = std::uint64_t;

  explicit Philox(std::uint64_t key_lo, std::uint64_t key_hi = 0)
      : key_{key_lo, key_hi} {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64() {
    if (buffer_pos_ == 4) {
      block();
      buffer_pos_ = 0;
    }
    return buffer_[buffer_pos_++];
  }

  // [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller; the spare value is cached, so draw order is part of the
  // stream contract.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u = 1.0 - uniform01();  // (0, 1]
    const double r = std::sqrt(-2.0 * std::log(u));
    const double theta = 2.0 * M_PI * uniform01();
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  static std::uint64_t mulhi(std::uint64_t a, std::uint64_t b) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(a) * b) >> 64);
  }

  void block() {
    constexpr std::uint64_t kM0 = 0xD2E7470EE14C6C93ull;
    constexpr std::uint64_t kM1 = 0xCA5A826395121157ull;
    constexpr std::uint64_t kW0 = 0x9E3779B97F4A7C15ull;
    constexpr std::uint64_t kW1 = 0xBB67AE8584CAA73Bull;

    // Counter is bumped before the rounds, so the first block sits at
    // counter 1; this matches numpy's Philox stream for the same key.
    for (int i = 0; i < 4; ++i) {
      if (++counter_[i] != 0) break;
    }

    std::array<std::uint64_t, 4> x = counter_;
    std::array<std::uint64_t, 2> k = key_;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t hi0 = mulhi(kM0, x[0]);
      const std::uint64_t lo0 = kM0 * x[0];
      const std::uint64_t hi1 = mulhi(kM1, x[2]);
      const std::uint64_t lo1 = kM1 * x[2];
      x = {hi1 ^ x[1] ^ k[0], lo1, hi0 ^ x[3] ^ k[1], lo0};
      k[0] += kW0;
      k[1] += kW1;
    }
    buffer_ = x;
  }

  std::array<std::uint64_t, 4> counter_{0, 0, 0, 0};
  std::array<std::uint64_t, 2> key_;
  std::array<std::uint64_t, 4> buffer_{};
  int buffer_pos_ = 4;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace posekit

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace vaeneu {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// A stream is identified by (seed, stream_id). Output block `n` of a stream
/// is philox(key = seed, counter = {n_lo, n_hi, stream_lo, stream_hi}), so
/// the whole sequence is a pure function of the identifiers and the number
/// of values drawn so far. Streams with different ids never overlap, which
/// is what per-path and per-run substreams rely on.
class RngStream {
 public:
  static constexpr const char* kAlgorithm = "philox4x32-10";

  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_(stream_id) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }
  /// Number of 64-bit words consumed so far.
  std::uint64_t draws() const { return draws_; }

  /// Independent child stream; does not advance this one.
  RngStream substream(std::uint64_t index) const {
    return RngStream(seed_ ^ (0x9E3779B97F4A7C15ULL * (stream_ + 1)), index);
  }

  std::uint64_t next_u64() {
    if (buffered_ == 0) {
      block_ = philox(block_counter_++);
      buffered_ = 2;
    }
    const std::size_t k = 2 - buffered_--;
    ++draws_;
    return (static_cast<std::uint64_t>(block_[2 * k]) << 32) | block_[2 * k + 1];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return r % n;
  }

  /// Standard normal via the Box-Muller transform; both variates of a pair
  /// are used.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  /// The raw block function.
  static Block philox4x32_10(Block ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      std::uint32_t hi0, lo0, hi1, lo1;
      mulhilo(0xD2511F53u, ctr[0], hi0, lo0);
      mulhilo(0xCD9E8D57u, ctr[2], hi1, lo1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    return ctr;
  }

 private:

  static void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                      std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
  }

  Block philox(std::uint64_t n) const {
    return philox4x32_10(
        {static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(n >> 32),
         static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)},
        {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_counter_ = 0;
  std::uint64_t draws_ = 0;
  Block block_{};
  std::size_t buffered_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace vaeneu

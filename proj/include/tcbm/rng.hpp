#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace tcbm::rng {

/// Independent randomness consumers of a simulated path. The time-change
/// and the Brownian motion never share a stream.
enum class StreamId : std::uint32_t {
  time_change = 1,
  brownian = 2,
  auxiliary = 3,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Philox4x32-10 block function (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Counter-based stream keyed by (master seed, path index, stream id).
///
/// The key is derived from (master seed, stream id); the path index occupies
/// the upper two counter words and the draw index the lower two, so distinct
/// (path, stream) pairs can never overlap. Satisfies
/// UniformRandomBitGenerator, so the standard distributions apply.
class Stream {
 public:
  using result_type = std::uint64_t;

  Stream(std::uint64_t master_seed, std::uint64_t path_index, StreamId id);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  /// Number of 64-bit words drawn so far.
  std::uint64_t position() const { return position_; }

 private:
  std::array<std::uint32_t, 2> key_{};
  std::uint64_t path_index_ = 0;
  std::uint64_t position_ = 0;
  std::array<std::uint32_t, 4> block_{};
};

}  // namespace tcbm::rng

#include "tcbm/rng.hpp"

namespace tcbm::rng {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo,
                    std::uint32_t& hi) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  lo = static_cast<std::uint32_t>(product);
  hi = static_cast<std::uint32_t>(product >> 32);
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t lo0, hi0, lo1, hi1;
    mulhilo(kPhiloxM0, ctr[0], lo0, hi0);
    mulhilo(kPhiloxM1, ctr[2], lo1, hi1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

Stream::Stream(std::uint64_t master_seed, std::uint64_t path_index, StreamId id)
    : path_index_(path_index) {
  const std::uint64_t k =
      splitmix64(master_seed ^ splitmix64(static_cast<std::uint64_t>(id)));
  key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
}

Stream::result_type Stream::operator()() {
  const std::uint64_t block_index = position_ / 2;
  if (position_ % 2 == 0) {
    block_ = philox4x32({static_cast<std::uint32_t>(block_index),
                         static_cast<std::uint32_t>(block_index >> 32),
                         static_cast<std::uint32_t>(path_index_),
                         static_cast<std::uint32_t>(path_index_ >> 32)},
                        key_);
  }
  const std::size_t offset = (position_ % 2) * 2;
  ++position_;
  return (static_cast<std::uint64_t>(block_[offset + 1]) << 32) | block_[offset];
}

}  // namespace tcbm::rng

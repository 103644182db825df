#include <gtest/gtest.h>

#include <random>
#include <set>

#include "tcbm/rng.hpp"

using namespace tcbm;

// Known-answer vectors of the Random123 reference implementation.
TEST(Philox, KnownAnswerZero) {
  const auto out = rng::philox4x32({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out[0], 0x6627e8d5u);
  EXPECT_EQ(out[1], 0xe169c58du);
  EXPECT_EQ(out[2], 0xbc57ac4cu);
  EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Philox, KnownAnswerOnes) {
  const auto out = rng::philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                   {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out[0], 0x408f276du);
  EXPECT_EQ(out[1], 0x41c83b0eu);
  EXPECT_EQ(out[2], 0xa20bc7c6u);
  EXPECT_EQ(out[3], 0x6d5451fdu);
}

TEST(Stream, SameKeySameSequence) {
  rng::Stream a(42, 7, rng::StreamId::brownian);
  rng::Stream b(42, 7, rng::StreamId::brownian);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a(), b());
  EXPECT_EQ(a.position(), 100u);
}

TEST(Stream, DistinctPathsAndStreamsDiffer) {
  std::set<std::uint64_t> first;
  for (std::uint64_t path = 0; path < 50; ++path) {
    for (auto id : {rng::StreamId::time_change, rng::StreamId::brownian,
                    rng::StreamId::auxiliary}) {
      rng::Stream s(42, path, id);
      first.insert(s());
    }
  }
  EXPECT_EQ(first.size(), 150u);
  rng::Stream a(1, 0, rng::StreamId::brownian);
  rng::Stream b(2, 0, rng::StreamId::brownian);
  EXPECT_NE(a(), b());
}

TEST(Stream, UniformMoments) {
  rng::Stream s(3, 0, rng::StreamId::auxiliary);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = u(s);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  EXPECT_NEAR(mean, 0.5, 3.0 * std::sqrt(1.0 / 12.0 / n));
  EXPECT_NEAR(sum2 / n - mean * mean, 1.0 / 12.0, 1e-3);
}

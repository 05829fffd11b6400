#include <gtest/gtest.h>

#include <cmath>
#include <thread>
#include <vector>

#include "sparseid/rng.hpp"

using namespace sparseid;

TEST(CounterRng, SameKeySameStream) {
  CounterRng a(42, 7);
  CounterRng b(42, 7);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(CounterRng, DistinctStreamsDiffer) {
  CounterRng a(42, 7);
  CounterRng b(42, 8);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64();
  EXPECT_EQ(same, 0);
}

TEST(CounterRng, Uniform01MomentsAndRange) {
  CounterRng rng(123, 0);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sum2 += u * u;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 0.005);
  EXPECT_NEAR(var, 1.0 / 12.0, 0.005);
}

TEST(CounterRng, GaussianMoments) {
  CounterRng rng(99, 1);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0, sum4 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.gaussian();
    sum += g;
    sum2 += g * g;
    sum4 += g * g * g * g;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sum2 / n, 1.0, 0.03);
  EXPECT_NEAR(sum4 / n, 3.0, 0.15);  // normal kurtosis
}

TEST(CounterRng, BelowIsUnbiasedEnough) {
  CounterRng rng(7, 3);
  std::vector<int> counts(10, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[rng.below(10)];
  for (int c : counts) EXPECT_NEAR(c, n / 10.0, 5.0 * std::sqrt(n * 0.1 * 0.9));
}

TEST(CounterRng, ThreadScheduleIndependent) {
  // Draw the same stream from several threads; every thread sees identical output.
  std::vector<std::vector<std::uint64_t>> streams(8);
  std::vector<std::thread> pool;
  for (auto& s : streams)
    pool.emplace_back([&s] {
      CounterRng rng(1234, 5);
      for (int i = 0; i < 4096; ++i) s.push_back(rng.next_u64());
    });
  for (auto& t : pool) t.join();
  for (const auto& s : streams) EXPECT_EQ(s, streams.front());
}

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mixedboot/random.hpp"
#include "mixedboot/simlab.hpp"

using namespace mixedboot;

TEST(RandomSource, SameSeedAndStreamRepeat) {
  RandomSource a(42, 3), b(42, 3), c(42, 4), d(43, 3);
  bool differs_c = false, differs_d = false;
  for (int k = 0; k < 1000; ++k) {
    const std::uint64_t x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs_c |= x != c.next_u64();
    differs_d |= x != d.next_u64();
  }
  EXPECT_TRUE(differs_c);
  EXPECT_TRUE(differs_d);
}

TEST(RandomSource, FixedReferenceValues) {
  // Guards the draw pathway against accidental changes.
  RandomSource a(7, 0), b(7, 0);
  const double u = a.uniform();
  EXPECT_GE(u, 0.0);
  EXPECT_LT(u, 1.0);
  EXPECT_EQ(u, static_cast<double>(b.next_u64() >> 11) * 0x1.0p-53);
}

TEST(RandomSource, StreamsAreUncorrelated) {
  RandomSource a(1, 0), b(1, 1);
  const int n = 100000;
  double sab = 0.0;
  for (int k = 0; k < n; ++k) sab += (a.uniform() - 0.5) * (b.uniform() - 0.5);
  // Var of the product of two centered U(0,1) is 1/144.
  EXPECT_LT(std::abs(sab / n), 4.0 * std::sqrt(1.0 / 144.0 / n));
}

TEST(Srswr, SingletonPool) {
  RandomSource rng(1, 0);
  const std::vector<double> v{3.5};
  const auto out = srswr<double>(v, 10, rng);
  for (double x : out) EXPECT_EQ(x, 3.5);
}

TEST(Srswr, EmptyPoolThrows) {
  RandomSource rng(1, 0);
  const std::vector<double> v;
  EXPECT_THROW(srswr<double>(v, 3, rng), InvalidArgument);
}

TEST(Srswr, FrequenciesWithinThreeSe) {
  RandomSource rng(11, 0);
  const std::vector<int> v{1, 2, 3, 4};
  const int n = 100000;
  const auto out = srswr<int>(v, n, rng);
  std::vector<int> count(5, 0);
  for (int x : out) ++count[x];
  const double se = std::sqrt(0.25 * 0.75 / n);
  for (int k = 1; k <= 4; ++k) EXPECT_LT(std::abs(count[k] / double(n) - 0.25), 3.0 * se);
}

TEST(Srswr, Deterministic) {
  RandomSource a(5, 9), b(5, 9);
  const std::vector<int> v{1, 2, 3, 4, 5, 6, 7};
  EXPECT_EQ(srswr<int>(v, 50, a), srswr<int>(v, 50, b));
}

TEST(Ppswr, ProbabilitiesFollowSizes) {
  RandomSource rng(13, 0);
  const std::vector<int> v{1, 2, 3};
  const std::vector<double> sizes{1, 2, 1};
  const int n = 100000;
  const auto out = ppswr<int>(v, sizes, n, rng);
  std::vector<int> count(4, 0);
  for (int x : out) ++count[x];
  const double p[] = {0.0, 0.25, 0.5, 0.25};
  for (int k = 1; k <= 3; ++k)
    EXPECT_LT(std::abs(count[k] / double(n) - p[k]), 3.0 * std::sqrt(p[k] * (1 - p[k]) / n));
}

TEST(Ppswr, EqualSizesReproduceSrswr) {
  RandomSource a(21, 2), b(21, 2);
  std::vector<int> v(37);
  for (int k = 0; k < 37; ++k) v[k] = k;
  const std::vector<double> sizes(37, 7.0);
  EXPECT_EQ(ppswr<int>(v, sizes, 500, a), srswr<int>(v, 500, b));
}

TEST(Ppswr, ZeroSizesThrowAndZeroWeightNeverDrawn) {
  RandomSource rng(3, 0);
  const std::vector<int> v{1, 2, 3};
  const std::vector<double> zero{0, 0, 0};
  EXPECT_THROW(ppswr<int>(v, zero, 3, rng), InvalidArgument);
  const std::vector<double> sizes{0, 1, 0};
  for (int x : ppswr<int>(v, sizes, 1000, rng)) EXPECT_EQ(x, 2);
}

TEST(Ppswr, UnbalancedProfileFrequencies) {
  const auto& prof = default_unbalanced_profile();
  std::vector<double> sizes(prof.begin(), prof.end());
  std::vector<int> idx(prof.size());
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = static_cast<int>(k);
  RandomSource rng(17, 0);
  const int n = 100000;
  const auto out = ppswr<int>(idx, sizes, n, rng);
  std::vector<int> count(prof.size(), 0);
  for (int x : out) ++count[x];
  for (std::size_t k = 0; k < prof.size(); ++k) {
    const double p = prof[k] / 752.0;
    EXPECT_LT(std::abs(count[k] / double(n) - p), 3.5 * std::sqrt(p * (1 - p) / n)) << k;
  }
}

TEST(Variates, ZeroSdIsConstant) {
  RandomSource rng(1, 0);
  const auto v = draw_normal(2.5, 0.0, 20, rng);
  EXPECT_TRUE((v.array() == 2.5).all());
  EXPECT_THROW(draw_normal(0.0, -1.0, 2, rng), InvalidArgument);
}

TEST(Variates, NormalMoments) {
  RandomSource rng(4, 0);
  const int n = 1000000;
  const auto v = draw_normal(0.0, 1.0, n, rng);
  const double m = v.mean();
  const double var = (v.array() - m).square().mean();
  EXPECT_LT(std::abs(m), 4.0 / std::sqrt(n));
  EXPECT_LT(std::abs(var - 1.0), 4.0 * std::sqrt(2.0 / n));
}

TEST(Variates, StandardizedChisqMoments) {
  RandomSource rng(5, 0);
  const int n = 1000000;
  const auto v = draw_chisq1_standardized(n, rng);
  const double m = v.mean();
  const double var = (v.array() - m).square().mean();
  // Var of the sample variance uses the fourth central moment 15 of this law.
  EXPECT_LT(std::abs(m), 4.0 / std::sqrt(n));
  EXPECT_LT(std::abs(var - 1.0), 4.0 * std::sqrt((15.0 - 1.0) / n));
}

TEST(Variates, ExponentialMean) {
  RandomSource rng(6, 0);
  const int n = 1000000;
  const auto v = draw_exp1(n, rng);
  EXPECT_LT(std::abs(v.mean() - 1.0), 4.0 / std::sqrt(n));
  EXPECT_TRUE((v.array() >= 0.0).all());
}

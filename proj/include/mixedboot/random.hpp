#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mixedboot/errors.hpp"

namespace mixedboot {

// splitmix64 finalizer; used to derive child seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) {
  return mix64(seed ^ mix64(key + 0x632BE59BD9B4E019ULL));
}

// Deterministic random stream keyed by (seed, stream_id).
//
// The engine is std::mt19937_64 seeded through std::seed_seq, both fully
// specified by the standard; the variate transforms below are written out
// so draw sequences do not depend on the standard library's distributions.
class RandomSource {
 public:
  RandomSource(std::uint64_t seed, std::uint64_t stream_id) : seed_(seed), stream_(stream_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(stream_id >> 32), 0x6d62u};
    engine_.seed(seq);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Standard normal by the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double a, b, s;
    do {
      a = 2.0 * uniform() - 1.0;
      b = 2.0 * uniform() - 1.0;
      s = a * a + b * b;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = b * f;
    has_spare_ = true;
    return a * f;
  }

  double exponential() { return -std::log1p(-uniform()); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Index sampler with replacement by inverse CDF over cumulative weights.
// Equal weights take the floor(u * K) path, so PPS with equal sizes and
// SRS consume the same uniforms and return the same indices.
class IndexSampler {
 public:
  // Uniform over K indices.
  explicit IndexSampler(std::size_t k) : k_(k), equal_(true) {
    if (k == 0) throw InvalidArgument("cannot sample from an empty pool");
  }

  explicit IndexSampler(std::span<const double> weights) : k_(weights.size()) {
    if (k_ == 0) throw InvalidArgument("cannot sample from an empty pool");
    equal_ = true;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("sampling weights must be finite and nonnegative");
      if (w != weights[0]) equal_ = false;
    }
    if (equal_) {
      if (!(weights[0] > 0.0)) throw InvalidArgument("sampling weights are all zero");
      return;
    }
    cumulative_.resize(k_);
    double acc = 0.0;
    for (std::size_t i = 0; i < k_; ++i) cumulative_[i] = (acc += weights[i]);
    if (!(acc > 0.0)) throw InvalidArgument("sampling weights are all zero");
  }

  std::size_t size() const noexcept { return k_; }

  std::size_t draw(RandomSource& rng) const {
    const double u = rng.uniform();
    if (equal_) return std::min(static_cast<std::size_t>(u * static_cast<double>(k_)), k_ - 1);
    const double t = u * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), t);
    if (it != cumulative_.end()) return static_cast<std::size_t>(it - cumulative_.begin());
    // t rounded up to the total: take the last index with positive weight.
    std::size_t idx = k_ - 1;
    while (idx > 0 && cumulative_[idx] == cumulative_[idx - 1]) --idx;
    return idx;
  }

 private:
  std::size_t k_;
  bool equal_ = false;
  std::vector<double> cumulative_;
};

// count draws with replacement, each value equally likely.
template <typename T>
std::vector<T> srswr(std::span<const T> values, std::size_t count, RandomSource& rng) {
  IndexSampler s(values.size());
  std::vector<T> out(count);
  for (auto& v : out) v = values[s.draw(rng)];
  return out;
}

// count draws with replacement, value i chosen with probability sizes_i / sum(sizes).
template <typename T>
std::vector<T> ppswr(std::span<const T> values, std::span<const double> sizes, std::size_t count,
                     RandomSource& rng) {
  if (values.size() != sizes.size()) throw InvalidArgument("values and sizes differ in length");
  IndexSampler s(sizes);
  std::vector<T> out(count);
  for (auto& v : out) v = values[s.draw(rng)];
  return out;
}

inline Eigen::VectorXd draw_normal(double mean, double sd, std::size_t count, RandomSource& rng) {
  if (!(sd >= 0.0)) throw InvalidArgument("standard deviation must be nonnegative");
  Eigen::VectorXd v(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = mean + sd * rng.normal();
  return v;
}

// (chi2_1 - 1) / sqrt(2): mean 0, variance 1, skewness sqrt(8).
inline Eigen::VectorXd draw_chisq1_standardized(std::size_t count, RandomSource& rng) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double z = rng.normal();
    v(i) = (z * z - 1.0) / std::sqrt(2.0);
  }
  return v;
}

inline Eigen::VectorXd draw_exp1(std::size_t count, RandomSource& rng) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.exponential();
  return v;
}

}  // namespace mixedboot

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mixedboot/dataset.hpp"
#include "mixedboot/engines.hpp"
#include "mixedboot/errors.hpp"
#include "mixedboot/fit.hpp"
#include "mixedboot/inference.hpp"
#include "mixedboot/parallel.hpp"
#include "mixedboot/random.hpp"

namespace mixedboot {

enum class EffectDistribution {
  NormalSet1,  // u ~ N(0, s2u), e ~ N(0, s2e)
  Chisq1Set2,  // sigma * (chi2_1 - 1) / sqrt(2)
};

// 100 cluster sizes, min 1, max 42, total 752, right skewed. Frozen data:
// quantiles of a lognormal (shape 1.19, scale 4.055) rounded and clipped to [1, 42].
inline const std::vector<int>& default_unbalanced_profile() {
  static const std::vector<int> sizes{
      1,  1,  1,  1,  1,  1,  1,  1,  1,  1,  1,  1,  1,  1,  1,  1,  1,  1,  1,  1,
      2,  2,  2,  2,  2,  2,  2,  2,  2,  2,  2,  2,  2,  2,  3,  3,  3,  3,  3,  3,
      3,  3,  3,  3,  3,  4,  4,  4,  4,  4,  4,  4,  4,  5,  5,  5,  5,  5,  5,  5,
      6,  6,  6,  6,  6,  7,  7,  7,  7,  7,  8,  8,  8,  9,  9,  9,  10, 10, 10, 11,
      11, 12, 12, 13, 14, 14, 15, 16, 17, 18, 19, 21, 22, 25, 27, 30, 35, 42, 42, 42};
  return sizes;
}

struct SimulationScenario {
  std::string name = "custom";
  std::vector<int> cluster_sizes;
  VectorXd beta = (VectorXd(2) << 1.0, 2.0).finished();
  double sigma2_u = 0.04;
  double sigma2_e = 0.16;
  EffectDistribution effect_dist = EffectDistribution::NormalSet1;
  std::size_t R = 200;
  std::size_t B = 200;
  double level = 0.95;
  std::vector<BootstrapMethodId> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  std::uint64_t seed = 11;
  Criterion criterion = Criterion::REML;

  ThetaVector truth() const { return {beta, sigma2_u, sigma2_e}; }

  void validate() const {
    if (cluster_sizes.size() < 2) throw InvalidArgument("scenario needs at least two clusters");
    for (int n : cluster_sizes)
      if (n < 1) throw InvalidArgument("scenario cluster sizes must be >= 1");
    if (beta.size() < 1) throw InvalidArgument("scenario needs an intercept");
    if (!(sigma2_u >= 0.0) || !(sigma2_e >= 0.0)) throw InvalidArgument("negative variance");
    if (R == 0 || B == 0) throw InvalidArgument("R and B must be positive");
    if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("level must lie in (0, 1)");
  }
};

inline std::vector<int> balanced_sizes(std::size_t D, int n) { return std::vector<int>(D, n); }

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"set1-balanced", "set1-unbalanced", "set2-balanced",
                                              "set2-unbalanced"};
  return names;
}

// Designs of the coverage study: D = 100, beta = (1, 2), sigma2_u = 0.04,
// sigma2_e = 0.16; balanced n_i = 7 or the frozen unbalanced profile.
inline std::optional<SimulationScenario> preset(const std::string& name) {
  SimulationScenario s;
  s.name = name;
  if (name == "set1-balanced" || name == "set2-balanced")
    s.cluster_sizes = balanced_sizes(100, 7);
  else if (name == "set1-unbalanced" || name == "set2-unbalanced")
    s.cluster_sizes = default_unbalanced_profile();
  else
    return std::nullopt;
  s.effect_dist = name.rfind("set2", 0) == 0 ? EffectDistribution::Chisq1Set2
                                             : EffectDistribution::NormalSet1;
  return s;
}

namespace detail {
inline std::uint64_t sim_seed(std::uint64_t seed, std::size_t sim_index) {
  return derive_seed(seed, static_cast<std::uint64_t>(sim_index));
}
inline std::uint64_t bootstrap_seed(std::uint64_t seed, std::size_t sim_index) {
  return derive_seed(sim_seed(seed, sim_index), 0xB007ULL);
}
}  // namespace detail

// Dataset number sim_index of the scenario. Draw order: cluster effects,
// covariates (row-major, p - 1 per unit), unit errors.
inline std::pair<ClusteredDataset, ThetaVector> generate_dataset(const SimulationScenario& sc,
                                                                 std::size_t sim_index) {
  sc.validate();
  RandomSource rng(detail::sim_seed(sc.seed, sim_index), 0);
  const std::size_t D = sc.cluster_sizes.size();
  std::size_t N = 0;
  for (int n : sc.cluster_sizes) N += static_cast<std::size_t>(n);
  const Eigen::Index p = sc.beta.size();
  const double su = std::sqrt(sc.sigma2_u);
  const double se = std::sqrt(sc.sigma2_e);

  VectorXd u, e;
  if (sc.effect_dist == EffectDistribution::NormalSet1) {
    u = draw_normal(0.0, su, D, rng);
  } else {
    u = su * draw_chisq1_standardized(D, rng);
  }
  MatrixXd X(static_cast<Eigen::Index>(N), p);
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    X(r, 0) = 1.0;
    for (Eigen::Index c = 1; c < p; ++c) X(r, c) = rng.uniform();
  }
  if (sc.effect_dist == EffectDistribution::NormalSet1) {
    e = draw_normal(0.0, se, N, rng);
  } else {
    e = se * draw_chisq1_standardized(N, rng);
  }
  VectorXd y = X * sc.beta + e;
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < D; ++i)
    for (int j = 0; j < sc.cluster_sizes[i]; ++j) y(row++) += u(static_cast<Eigen::Index>(i));
  return {ClusteredDataset(sc.cluster_sizes, std::move(y), std::move(X)), sc.truth()};
}

struct MethodCoverage {
  CoverageReport report;
  std::size_t failures = 0;  // simulations where the method produced no intervals
};

struct StudyResult {
  std::string scenario;
  std::size_t R = 0;
  std::size_t B = 0;
  double level = 0.95;
  std::uint64_t seed = 0;
  std::size_t fit_failures = 0;
  std::vector<MethodCoverage> methods;
};

// Simulates, fits and bootstraps R datasets; every method of one simulation
// shares the same bootstrap seed. Coverage of each method is over the
// simulations where it produced intervals.
inline StudyResult run_study(const SimulationScenario& sc, unsigned threads = 1) {
  sc.validate();
  const std::size_t M = sc.methods.size();
  const Eigen::Index p = sc.beta.size();
  // cis[r][m] empty when the method failed on simulation r.
  std::vector<std::vector<std::optional<std::vector<PercentileCI>>>> cis(
      sc.R, std::vector<std::optional<std::vector<PercentileCI>>>(M));
  std::vector<char> fit_failed(sc.R, 0);

  BootstrapOptions bopts;
  bopts.threads = 1;
  bopts.statistics.clear();

  parallel_for(sc.R, threads, [&](std::size_t r) {
    auto [data, truth] = generate_dataset(sc, r);
    FitResult fr;
    try {
      fr = fit(data, sc.criterion);
    } catch (const FitError&) {
      fit_failed[r] = 1;
      return;
    }
    const std::uint64_t bseed = detail::bootstrap_seed(sc.seed, r);
    for (std::size_t m = 0; m < M; ++m) {
      try {
        const BootstrapRun run = run_bootstrap(sc.methods[m], data, fr, sc.B, bseed, bopts);
        cis[r][m] = theta_and_lambda_cis(run, sc.level);
      } catch (const Error&) {
      }
    }
  });

  StudyResult res;
  res.scenario = sc.name;
  res.R = sc.R;
  res.B = sc.B;
  res.level = sc.level;
  res.seed = sc.seed;
  for (char f : fit_failed) res.fit_failures += f ? 1 : 0;
  if (static_cast<double>(res.fit_failures) > 0.05 * static_cast<double>(sc.R))
    throw BootstrapError("study aborted: " + std::to_string(res.fit_failures) + " of " +
                         std::to_string(sc.R) + " simulated datasets failed to fit");

  const auto targets = coverage_targets(p);
  const auto truths = coverage_truths(sc.truth());
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<std::vector<PercentileCI>> used;
    std::size_t failures = 0;
    for (std::size_t r = 0; r < sc.R; ++r) {
      if (cis[r][m])
        used.push_back(*cis[r][m]);
      else
        ++failures;
    }
    res.methods.push_back({coverage(sc.methods[m], targets, truths, used), failures});
  }
  return res;
}

}  // namespace mixedboot

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "mixedboot/engines.hpp"
#include "mixedboot/errors.hpp"

namespace mixedboot {

inline constexpr std::size_t kMinCiSamples = 20;
inline constexpr double kMaxFailureFraction = 0.10;

struct PercentileCI {
  std::string target;
  double level = 0.95;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t B_effective = 0;

  bool contains(double v) const { return lower <= v && v <= upper; }
};

// Quantile of sorted x at probability q: linear interpolation at the
// 1-based position 1 + (m - 1) q.
inline double sorted_quantile(const std::vector<double>& x, double q) {
  const std::size_t m = x.size();
  const double pos = static_cast<double>(m - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, m - 1);
  const double frac = pos - static_cast<double>(lo);
  return frac == 0.0 ? x[lo] : x[lo] + frac * (x[hi] - x[lo]);
}

inline PercentileCI percentile_ci(std::vector<double> samples, double level,
                                  std::string target = {}) {
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("CI level must lie in (0, 1)");
  if (samples.size() < kMinCiSamples)
    throw BootstrapError("percentile CI needs at least " + std::to_string(kMinCiSamples) +
                         " usable samples, got " + std::to_string(samples.size()));
  for (double v : samples)
    if (!std::isfinite(v)) throw InvalidArgument("non-finite bootstrap sample");
  std::sort(samples.begin(), samples.end());
  const double alpha = 1.0 - level;
  PercentileCI ci;
  ci.target = std::move(target);
  ci.level = level;
  ci.lower = sorted_quantile(samples, alpha / 2.0);
  ci.upper = sorted_quantile(samples, 1.0 - alpha / 2.0);
  ci.B_effective = samples.size();
  return ci;
}

namespace detail {
inline void check_attrition(const BootstrapRun& run) {
  if (static_cast<double>(run.failures()) > kMaxFailureFraction * static_cast<double>(run.B))
    throw BootstrapError(std::to_string(run.failures()) + " of " + std::to_string(run.B) +
                         " replicates failed (limit 10%)");
}
}  // namespace detail

// CI for packed theta column k of a run.
inline PercentileCI percentile_ci(const BootstrapRun& run, Eigen::Index k, double level) {
  detail::check_attrition(run);
  const auto names = theta_names(run.theta_star.cols() - 2);
  return percentile_ci(run.theta_column(k), level, names[static_cast<std::size_t>(k)]);
}

inline PercentileCI statistic_ci(const BootstrapRun& run, Eigen::Index s, double level) {
  detail::check_attrition(run);
  return percentile_ci(run.stat_column(s), level, run.stat_names[static_cast<std::size_t>(s)]);
}

// Proportion of samples at or below null_value.
inline double bootstrap_pvalue(const std::vector<double>& samples, double null_value = 0.0) {
  if (samples.empty()) throw BootstrapError("p-value needs at least one sample");
  std::size_t k = 0;
  for (double v : samples)
    if (v <= null_value) ++k;
  return static_cast<double>(k) / static_cast<double>(samples.size());
}

// Empirical coverage per target over R simulated datasets.
struct CoverageReport {
  BootstrapMethodId method = BootstrapMethodId::PREB1;
  std::vector<std::string> targets;
  std::vector<double> coverage;
  std::size_t R = 0;
};

// intervals[r][t] is the CI of target t in simulation r; truths[t] is the
// true value of target t.
inline CoverageReport coverage(BootstrapMethodId method, const std::vector<std::string>& targets,
                               const std::vector<double>& truths,
                               const std::vector<std::vector<PercentileCI>>& intervals) {
  if (targets.size() != truths.size()) throw InvalidArgument("targets and truths differ in length");
  CoverageReport rep;
  rep.method = method;
  rep.targets = targets;
  rep.R = intervals.size();
  rep.coverage.assign(targets.size(), 0.0);
  if (rep.R == 0) return rep;
  for (const auto& sim : intervals) {
    if (sim.size() != targets.size()) throw InvalidArgument("simulation has the wrong CI count");
    for (std::size_t t = 0; t < targets.size(); ++t)
      if (sim[t].contains(truths[t])) rep.coverage[t] += 1.0;
  }
  for (double& c : rep.coverage) c /= static_cast<double>(rep.R);
  return rep;
}

// Targets beta0..beta{p-1}, sigma2_u, sigma2_e, lambda with true values.
inline std::vector<std::string> coverage_targets(Eigen::Index p) {
  auto names = theta_names(p);
  names.emplace_back("lambda");
  return names;
}

inline std::vector<double> coverage_truths(const ThetaVector& truth) {
  std::vector<double> v(truth.beta.data(), truth.beta.data() + truth.beta.size());
  v.push_back(truth.sigma2_u);
  v.push_back(truth.sigma2_e);
  v.push_back(truth.lambda());
  return v;
}

// CIs for every coverage target of a run; lambda is taken from the replicate
// variance components.
inline std::vector<PercentileCI> theta_and_lambda_cis(const BootstrapRun& run, double level) {
  detail::check_attrition(run);
  const Eigen::Index p = run.theta_star.cols() - 2;
  std::vector<PercentileCI> out;
  for (Eigen::Index k = 0; k < p + 2; ++k) out.push_back(percentile_ci(run, k, level));
  std::vector<double> lam;
  for (std::size_t b = 0; b < run.B; ++b) {
    if (run.status[b] == ReplicateStatus::failed) continue;
    const auto row = static_cast<Eigen::Index>(b);
    lam.push_back(run.theta_star(row, p) / run.theta_star(row, p + 1));
  }
  out.push_back(percentile_ci(lam, level, "lambda"));
  return out;
}

}  // namespace mixedboot

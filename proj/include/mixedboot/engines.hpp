#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mixedboot/dataset.hpp"
#include "mixedboot/errors.hpp"
#include "mixedboot/fit.hpp"
#include "mixedboot/likelihood.hpp"
#include "mixedboot/parallel.hpp"
#include "mixedboot/random.hpp"
#include "mixedboot/reflate.hpp"

namespace mixedboot {

enum class BootstrapMethodId {
  PREB0,
  PREB1,
  PREB2,
  MREB1,
  REB0,
  REB1,
  REB2,
  REBNC0,
  REBNC1,
  PARAMETRIC,
  CLUSTER,
  GENCLUSTER,
  CGR
};

inline constexpr BootstrapMethodId kAllMethods[] = {
    BootstrapMethodId::PREB0,  BootstrapMethodId::PREB1,      BootstrapMethodId::PREB2,
    BootstrapMethodId::MREB1,  BootstrapMethodId::REB0,       BootstrapMethodId::REB1,
    BootstrapMethodId::REB2,   BootstrapMethodId::PARAMETRIC, BootstrapMethodId::CLUSTER,
    BootstrapMethodId::GENCLUSTER, BootstrapMethodId::CGR,    BootstrapMethodId::REBNC0,
    BootstrapMethodId::REBNC1};

// Command-line key, e.g. "preb1".
inline std::string_view method_key(BootstrapMethodId m) {
  switch (m) {
    case BootstrapMethodId::PREB0: return "preb0";
    case BootstrapMethodId::PREB1: return "preb1";
    case BootstrapMethodId::PREB2: return "preb2";
    case BootstrapMethodId::MREB1: return "mreb1";
    case BootstrapMethodId::REB0: return "reb0";
    case BootstrapMethodId::REB1: return "reb1";
    case BootstrapMethodId::REB2: return "reb2";
    case BootstrapMethodId::REBNC0: return "rebnc0";
    case BootstrapMethodId::REBNC1: return "rebnc1";
    case BootstrapMethodId::PARAMETRIC: return "parametric";
    case BootstrapMethodId::CLUSTER: return "cluster";
    case BootstrapMethodId::GENCLUSTER: return "gencluster";
    case BootstrapMethodId::CGR: return "cgr";
  }
  return "?";
}

inline std::optional<BootstrapMethodId> parse_method(std::string_view key) {
  for (BootstrapMethodId m : kAllMethods)
    if (method_key(m) == key) return m;
  return std::nullopt;
}

enum class ReplicateStatus : std::uint8_t { ok, boundary, failed };

// A named function of one bootstrap replicate.
struct StatisticPlugin {
  std::string name;
  std::function<double(const ThetaVector& theta, const VectorXd& y_star,
                       const ClusteredDataset& data)>
      evaluate;
};

inline StatisticPlugin lambda_statistic() {
  return {"lambda", [](const ThetaVector& t, const VectorXd&, const ClusteredDataset&) {
            return t.lambda();
          }};
}

// c' beta.
inline StatisticPlugin linear_combination(std::string name, VectorXd c) {
  return {std::move(name), [c = std::move(c)](const ThetaVector& t, const VectorXd&,
                                              const ClusteredDataset&) {
            if (c.size() != t.beta.size())
              throw InvalidArgument("linear combination length differs from beta");
            return c.dot(t.beta);
          }};
}

struct BootstrapOptions {
  unsigned threads = 1;
  std::vector<StatisticPlugin> statistics{lambda_statistic()};
  FitOptions fit;
};

// B replicate estimates; failed rows hold NaN.
struct BootstrapRun {
  BootstrapMethodId method = BootstrapMethodId::PREB1;
  std::size_t B = 0;
  MatrixXd theta_star;  // B x (p + 2)
  MatrixXd stats_star;  // B x S
  std::vector<std::string> stat_names;
  std::vector<ReplicateStatus> status;
  std::uint64_t seed = 0;

  std::size_t failures() const {
    return static_cast<std::size_t>(
        std::count(status.begin(), status.end(), ReplicateStatus::failed));
  }
  std::size_t effective() const { return B - failures(); }

  // Values of column k over rows that did not fail.
  std::vector<double> theta_column(Eigen::Index k) const { return usable(theta_star, k); }
  std::vector<double> stat_column(Eigen::Index s) const { return usable(stats_star, s); }

 private:
  std::vector<double> usable(const MatrixXd& m, Eigen::Index k) const {
    std::vector<double> v;
    v.reserve(B);
    for (std::size_t b = 0; b < B; ++b)
      if (status[b] != ReplicateStatus::failed) v.push_back(m(static_cast<Eigen::Index>(b), k));
    return v;
  }
};

// One bootstrap replicate in raw form.
struct ReplicateSample {
  VectorXd residual;                 // y* - X beta_hat on the (possibly resampled) design
  std::vector<std::size_t> clusters;  // cluster bootstrap picks
  VectorXd weights;                  // generalized cluster bootstrap weights
};

namespace detail {

enum class EngineKind { Block, Parametric, Cluster, GenCluster };

struct EngineSpec {
  EngineKind kind = EngineKind::Block;
  bool own_donor = false;  // REBnc: each cluster resamples its own residuals
  std::optional<BootstrapMethodId> postscale_base;
};

inline EngineSpec spec_of(BootstrapMethodId m) {
  switch (m) {
    case BootstrapMethodId::PARAMETRIC: return {EngineKind::Parametric, false, {}};
    case BootstrapMethodId::CLUSTER: return {EngineKind::Cluster, false, {}};
    case BootstrapMethodId::GENCLUSTER: return {EngineKind::GenCluster, false, {}};
    case BootstrapMethodId::REBNC0:
    case BootstrapMethodId::REBNC1: return {EngineKind::Block, true, {}};
    case BootstrapMethodId::PREB2: return {EngineKind::Block, false, BootstrapMethodId::PREB0};
    case BootstrapMethodId::REB2: return {EngineKind::Block, false, BootstrapMethodId::REB0};
    default: return {EngineKind::Block, false, {}};
  }
}

inline ResamplingPools pools_for(BootstrapMethodId m, const FitResult& fit,
                                 const ClusteredDataset& data) {
  switch (m) {
    case BootstrapMethodId::PREB1: return preb1_pools(fit, data);
    case BootstrapMethodId::MREB1: return mreb1_pools(fit, data);
    case BootstrapMethodId::REB1:
    case BootstrapMethodId::REBNC1: return reb1_pools(fit, data);
    case BootstrapMethodId::PREB0:
    case BootstrapMethodId::PREB2: return identity_pools(fit, data, DonorScheme::PPS);
    case BootstrapMethodId::REB0:
    case BootstrapMethodId::REB2:
    case BootstrapMethodId::REBNC0: return identity_pools(fit, data, DonorScheme::SRS);
    case BootstrapMethodId::CGR: return cgr_pools(fit, data);
    default: throw InvalidArgument("method does not resample pools");
  }
}

// Everything a replicate needs, built once per run and shared read-only.
class Engine {
 public:
  Engine(BootstrapMethodId method, const ClusteredDataset& data, const FitResult& fit)
      : method_(method), spec_(spec_of(method)), data_(data), fit_(fit),
        design_(DesignMoments::of(data)),
        base_(ResponseMoments::of_residuals(data, fit.theta_hat.beta, fit.marginal_residuals)),
        clusters_(data.num_clusters()) {
    if (spec_.kind == EngineKind::Block) {
      pools_ = pools_for(method, fit, data);
      donors_.emplace(std::span<const double>(pools_->donor_weights.data(),
                                              static_cast<std::size_t>(pools_->donor_weights.size())));
      for (const auto& e : pools_->e_pools) within_.emplace_back(static_cast<std::size_t>(e.size()));
      if (pools_->residual_draw == ResidualDraw::GlobalPool) {
        global_.resize(static_cast<Eigen::Index>(data.num_units()));
        Eigen::Index k = 0;
        for (const auto& e : pools_->e_pools) {
          global_.segment(k, e.size()) = e;
          k += e.size();
        }
      }
    }
  }

  ReplicateSample draw(std::uint64_t seed, std::size_t b) const {
    RandomSource rng(seed, b);
    ReplicateSample s;
    const std::size_t D = data_.num_clusters();
    switch (spec_.kind) {
      case EngineKind::Block: {
        s.residual.resize(static_cast<Eigen::Index>(data_.num_units()));
        VectorXd u(static_cast<Eigen::Index>(D));
        for (std::size_t i = 0; i < D; ++i)
          u(static_cast<Eigen::Index>(i)) = pools_->u_pool(static_cast<Eigen::Index>(clusters_.draw(rng)));
        if (pools_->residual_draw == ResidualDraw::GlobalPool) {
          IndexSampler all(static_cast<std::size_t>(global_.size()));
          for (std::size_t i = 0; i < D; ++i) {
            const auto off = static_cast<Eigen::Index>(data_.offset(i));
            for (int j = 0; j < data_.size(i); ++j)
              s.residual(off + j) = u(static_cast<Eigen::Index>(i)) +
                                    global_(static_cast<Eigen::Index>(all.draw(rng)));
          }
          break;
        }
        for (std::size_t i = 0; i < D; ++i) {
          const std::size_t d = spec_.own_donor ? i : donors_->draw(rng);
          const VectorXd& pool = pools_->e_pools[d];
          const auto off = static_cast<Eigen::Index>(data_.offset(i));
          for (int j = 0; j < data_.size(i); ++j)
            s.residual(off + j) = u(static_cast<Eigen::Index>(i)) +
                                  pool(static_cast<Eigen::Index>(within_[d].draw(rng)));
        }
        break;
      }
      case EngineKind::Parametric: {
        const double su = std::sqrt(fit_.theta_hat.sigma2_u);
        const double se = std::sqrt(fit_.theta_hat.sigma2_e);
        const VectorXd u = draw_normal(0.0, su, D, rng);
        const VectorXd e = draw_normal(0.0, se, data_.num_units(), rng);
        s.residual = e;
        for (std::size_t i = 0; i < D; ++i)
          s.residual.segment(static_cast<Eigen::Index>(data_.offset(i)), data_.size(i)).array() +=
              u(static_cast<Eigen::Index>(i));
        break;
      }
      case EngineKind::Cluster: {
        s.clusters.resize(D);
        for (auto& h : s.clusters) h = clusters_.draw(rng);
        break;
      }
      case EngineKind::GenCluster: {
        s.weights = draw_exp1(D, rng);
        break;
      }
    }
    return s;
  }

  ThetaFit refit(const ReplicateSample& s, Criterion criterion, const FitOptions& opts) const {
    switch (spec_.kind) {
      case EngineKind::Cluster: {
        const DesignMoments dm = design_.select(s.clusters);
        const ResponseMoments rm = base_.select(s.clusters);
        return fit_moments(dm, rm, criterion, nullptr, opts);
      }
      case EngineKind::GenCluster:
        return fit_moments(design_, base_, criterion, &s.weights, opts);
      default: {
        const ResponseMoments rm =
            ResponseMoments::of_residuals(data_, fit_.theta_hat.beta, s.residual);
        return fit_moments(design_, rm, criterion, nullptr, opts);
      }
    }
  }

  // Dataset and responses the replicate corresponds to.
  std::pair<ClusteredDataset, VectorXd> materialize(const ReplicateSample& s) const {
    if (spec_.kind == EngineKind::Cluster) {
      ClusteredDataset d = data_.select_clusters(s.clusters);
      VectorXd y = d.y();
      return {std::move(d), std::move(y)};
    }
    if (spec_.kind == EngineKind::GenCluster) return {data_, data_.y()};
    VectorXd y = data_.X() * fit_.theta_hat.beta + s.residual;
    return {data_, std::move(y)};
  }

  bool needs_materialize() const { return spec_.kind == EngineKind::Cluster; }
  const ClusteredDataset& data() const { return data_; }
  const FitResult& fit() const { return fit_; }
  const std::optional<ResamplingPools>& pools() const { return pools_; }

 private:
  BootstrapMethodId method_;
  EngineSpec spec_;
  const ClusteredDataset& data_;
  const FitResult& fit_;
  DesignMoments design_;
  ResponseMoments base_;  // residuals about beta_hat on the observed responses
  IndexSampler clusters_;
  std::optional<ResamplingPools> pools_;
  std::optional<IndexSampler> donors_;
  std::vector<IndexSampler> within_;
  VectorXd global_;
};

inline void evaluate_statistics(const Engine& engine, const ReplicateSample& s,
                                const ThetaVector& theta, const std::vector<StatisticPlugin>& stats,
                                MatrixXd& out, Eigen::Index row) {
  if (stats.empty()) return;
  auto [d, y] = engine.materialize(s);
  for (std::size_t k = 0; k < stats.size(); ++k)
    out(row, static_cast<Eigen::Index>(k)) = stats[k].evaluate(theta, y, d);
}

// Shifts beta columns and rescales variance columns so that the mean over
// usable rows equals the point estimate.
inline void postscale(BootstrapRun& run, const ThetaVector& point) {
  const Eigen::Index p = point.beta.size();
  const VectorXd target = point.packed();
  for (Eigen::Index k = 0; k < p + 2; ++k) {
    const std::vector<double> col = run.theta_column(k);
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= static_cast<double>(col.size());
    for (std::size_t b = 0; b < run.B; ++b) {
      if (run.status[b] == ReplicateStatus::failed) continue;
      double& v = run.theta_star(static_cast<Eigen::Index>(b), k);
      if (k < p) {
        v += target(k) - mean;
      } else {
        if (mean == 0.0)
          throw BootstrapError("postscaling failed: zero replicate mean for column " +
                               theta_names(p)[static_cast<std::size_t>(k)]);
        v *= target(k) / mean;
      }
    }
  }
}

}  // namespace detail

// Regenerates replicate b of a run: the dataset it was fitted on, its
// responses and, for the generalized cluster bootstrap, its weights.
struct ReplicateView {
  ClusteredDataset data;
  VectorXd y;
  std::optional<VectorXd> weights;
};

inline ReplicateView regenerate_replicate(BootstrapMethodId method, const ClusteredDataset& data,
                                          const FitResult& fit, std::uint64_t seed,
                                          std::size_t b) {
  const detail::EngineSpec spec = detail::spec_of(method);
  const BootstrapMethodId base = spec.postscale_base.value_or(method);
  detail::Engine engine(base, data, fit);
  const ReplicateSample s = engine.draw(seed, b);
  auto [d, y] = engine.materialize(s);
  ReplicateView v{d.with_responses(y), y, std::nullopt};
  if (s.weights.size() > 0) v.weights = s.weights;
  return v;
}

// Runs B replicates of `method`. Replicate b draws from RandomSource(seed, b)
// only, so results are independent of the thread count.
inline BootstrapRun run_bootstrap(BootstrapMethodId method, const ClusteredDataset& data,
                                  const FitResult& fit, std::size_t B, std::uint64_t seed,
                                  const BootstrapOptions& opts = {}) {
  if (B == 0) throw InvalidArgument("B must be positive");
  const detail::EngineSpec spec = detail::spec_of(method);
  const BootstrapMethodId base = spec.postscale_base.value_or(method);
  const detail::Engine engine(base, data, fit);
  const Eigen::Index p = data.num_covariates();
  const Criterion criterion = fit.criterion;

  BootstrapRun run;
  run.method = method;
  run.B = B;
  run.seed = seed;
  run.theta_star = MatrixXd::Constant(static_cast<Eigen::Index>(B), p + 2,
                                      std::numeric_limits<double>::quiet_NaN());
  run.stats_star = MatrixXd::Constant(static_cast<Eigen::Index>(B),
                                      static_cast<Eigen::Index>(opts.statistics.size()),
                                      std::numeric_limits<double>::quiet_NaN());
  for (const auto& s : opts.statistics) run.stat_names.push_back(s.name);
  run.status.assign(B, ReplicateStatus::failed);

  const bool stats_now = !spec.postscale_base.has_value();
  parallel_for(B, opts.threads, [&](std::size_t b) {
    const ReplicateSample s = engine.draw(seed, b);
    ThetaFit tf;
    try {
      tf = engine.refit(s, criterion, opts.fit);
    } catch (const FitError&) {
      return;
    }
    if (!tf.converged) return;
    const auto row = static_cast<Eigen::Index>(b);
    run.theta_star.row(row) = tf.theta.packed().transpose();
    run.status[b] = tf.boundary ? ReplicateStatus::boundary : ReplicateStatus::ok;
    if (stats_now) detail::evaluate_statistics(engine, s, tf.theta, opts.statistics, run.stats_star, row);
  });

  if (run.effective() == 0) throw BootstrapError("all bootstrap replicates failed");

  if (spec.postscale_base) {
    detail::postscale(run, fit.theta_hat);
    if (!opts.statistics.empty()) {
      parallel_for(B, opts.threads, [&](std::size_t b) {
        if (run.status[b] == ReplicateStatus::failed) return;
        const auto row = static_cast<Eigen::Index>(b);
        const ThetaVector t = ThetaVector::unpack(run.theta_star.row(row).transpose());
        detail::evaluate_statistics(engine, engine.draw(seed, b), t, opts.statistics,
                                    run.stats_star, row);
      });
    }
  }
  return run;
}

inline BootstrapRun run_preb1(const ClusteredDataset& data, const FitResult& fit, std::size_t B,
                              std::uint64_t seed, const BootstrapOptions& opts = {}) {
  return run_bootstrap(BootstrapMethodId::PREB1, data, fit, B, seed, opts);
}

inline BootstrapRun run_mreb1(const ClusteredDataset& data, const FitResult& fit, std::size_t B,
                              std::uint64_t seed, const BootstrapOptions& opts = {}) {
  return run_bootstrap(BootstrapMethodId::MREB1, data, fit, B, seed, opts);
}

// REB-0/1/2, REBnc-0/1 and PREB-0/2.
inline BootstrapRun run_reb_family(BootstrapMethodId variant, const ClusteredDataset& data,
                                   const FitResult& fit, std::size_t B, std::uint64_t seed,
                                   const BootstrapOptions& opts = {}) {
  switch (variant) {
    case BootstrapMethodId::REB0:
    case BootstrapMethodId::REB1:
    case BootstrapMethodId::REB2:
    case BootstrapMethodId::REBNC0:
    case BootstrapMethodId::REBNC1:
    case BootstrapMethodId::PREB0:
    case BootstrapMethodId::PREB2: return run_bootstrap(variant, data, fit, B, seed, opts);
    default: throw InvalidArgument("not a REB-family variant");
  }
}

inline BootstrapRun run_parametric(const ClusteredDataset& data, const FitResult& fit,
                                   std::size_t B, std::uint64_t seed,
                                   const BootstrapOptions& opts = {}) {
  return run_bootstrap(BootstrapMethodId::PARAMETRIC, data, fit, B, seed, opts);
}

inline BootstrapRun run_cluster(const ClusteredDataset& data, const FitResult& fit, std::size_t B,
                                std::uint64_t seed, const BootstrapOptions& opts = {}) {
  return run_bootstrap(BootstrapMethodId::CLUSTER, data, fit, B, seed, opts);
}

inline BootstrapRun run_gencluster(const ClusteredDataset& data, const FitResult& fit,
                                   std::size_t B, std::uint64_t seed,
                                   const BootstrapOptions& opts = {}) {
  return run_bootstrap(BootstrapMethodId::GENCLUSTER, data, fit, B, seed, opts);
}

inline BootstrapRun run_cgr(const ClusteredDataset& data, const FitResult& fit, std::size_t B,
                            std::uint64_t seed, const BootstrapOptions& opts = {}) {
  return run_bootstrap(BootstrapMethodId::CGR, data, fit, B, seed, opts);
}

}  // namespace mixedboot

#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixedboot/dataset.hpp"
#include "mixedboot/errors.hpp"
#include "mixedboot/fit.hpp"

namespace mixedboot {

enum class PoolScheme { PREB1, MREB1, REB1, Identity, CGR };
enum class DonorScheme { PPS, SRS };
enum class ResidualDraw {
  DonorCluster,  // residuals for cluster i come from the pool of one donor cluster
  GlobalPool,    // every residual is drawn from the union of all pools
};

// Transformed predictors and residuals that bootstrap replicates draw from.
//
// donor_weights are the cluster selection probabilities used when a donor
// cluster is sampled; e_pools[i] has the length of cluster i.
struct ResamplingPools {
  VectorXd u_pool;
  std::vector<VectorXd> e_pools;
  VectorXd donor_weights;
  PoolScheme scheme = PoolScheme::Identity;
  ResidualDraw residual_draw = ResidualDraw::DonorCluster;
};

// Bootstrap moments of u* and e* computed exactly from the pools and their
// selection probabilities (one donor draw then one uniform draw within it,
// or one uniform draw from the union for the global pool).
struct PoolMoments {
  double u_mean = 0.0;
  double u_second = 0.0;
  double e_mean = 0.0;
  double e_second = 0.0;
};

inline PoolMoments exact_moments(const ResamplingPools& pools) {
  PoolMoments m;
  const double D = static_cast<double>(pools.u_pool.size());
  m.u_mean = pools.u_pool.sum() / D;
  m.u_second = pools.u_pool.squaredNorm() / D;
  if (pools.residual_draw == ResidualDraw::GlobalPool) {
    double n = 0.0;
    for (const auto& e : pools.e_pools) {
      m.e_mean += e.sum();
      m.e_second += e.squaredNorm();
      n += static_cast<double>(e.size());
    }
    m.e_mean /= n;
    m.e_second /= n;
    return m;
  }
  for (std::size_t i = 0; i < pools.e_pools.size(); ++i) {
    const auto& e = pools.e_pools[i];
    const double pi = pools.donor_weights(static_cast<Eigen::Index>(i));
    const double n = static_cast<double>(e.size());
    m.e_mean += pi * e.sum() / n;
    m.e_second += pi * e.squaredNorm() / n;
  }
  return m;
}

namespace detail {

inline VectorXd donor_weights(const ClusteredDataset& data, DonorScheme scheme) {
  const std::size_t D = data.num_clusters();
  VectorXd w(static_cast<Eigen::Index>(D));
  const double N = static_cast<double>(data.num_units());
  for (std::size_t i = 0; i < D; ++i)
    w(static_cast<Eigen::Index>(i)) =
        scheme == DonorScheme::PPS ? data.size(i) / N : 1.0 / static_cast<double>(D);
  return w;
}

inline std::vector<VectorXd> split(const ClusteredDataset& data, const VectorXd& stacked) {
  std::vector<VectorXd> out(data.num_clusters());
  for (std::size_t i = 0; i < data.num_clusters(); ++i)
    out[i] = stacked.segment(static_cast<Eigen::Index>(data.offset(i)), data.size(i));
  return out;
}

// Centered cluster predictors rescaled so their mean square is sigma2_u.
// `center_scale` selects the centered (true) or raw (false) mean square in
// the denominator; sigma2_u == 0 yields an all-zero pool.
inline VectorXd reflate_u(const VectorXd& u, double sigma2_u, bool center_scale) {
  const double D = static_cast<double>(u.size());
  const VectorXd uc = u.array() - u.mean();
  if (sigma2_u == 0.0) return VectorXd::Zero(u.size());
  const double ms = center_scale ? uc.squaredNorm() / D : u.squaredNorm() / D;
  if (!(ms > 0.0)) throw DegeneratePoolError("cluster-effect", "predictors have zero spread");
  return uc * (std::sqrt(sigma2_u) / std::sqrt(ms));
}

// Residuals rescaled so that sum_i pi_i n_i^{-1} sum_j e_ij^2 = sigma2_e, i.e.
// the second moment of a residual drawn with donor probabilities pi.
inline std::vector<VectorXd> reflate_e(const ClusteredDataset& data, const VectorXd& e_hat,
                                       double sigma2_e, const VectorXd& pi) {
  std::vector<VectorXd> pools = split(data, e_hat);
  double ms = 0.0;
  for (std::size_t i = 0; i < pools.size(); ++i)
    ms += pi(static_cast<Eigen::Index>(i)) * (pools[i].squaredNorm() / data.size(i));
  if (!(ms > 0.0))
    throw DegeneratePoolError("residual", "all within-cluster residuals are zero");
  const double scale = std::sqrt(sigma2_e) / std::sqrt(ms);
  for (auto& e : pools) e *= scale;
  return pools;
}

}  // namespace detail

// Centered, rescaled predictors; residuals scaled to sigma2_e under PPS donors.
inline ResamplingPools preb1_pools(const FitResult& fit, const ClusteredDataset& data) {
  ResamplingPools p;
  p.scheme = PoolScheme::PREB1;
  p.donor_weights = detail::donor_weights(data, DonorScheme::PPS);
  p.u_pool = detail::reflate_u(fit.u_hat, fit.theta_hat.sigma2_u, true);
  p.e_pools = detail::reflate_e(data, fit.e_hat, fit.theta_hat.sigma2_e, p.donor_weights);
  return p;
}

// Same cluster pool as PREB-1; residuals scaled for SRS donor selection.
inline ResamplingPools mreb1_pools(const FitResult& fit, const ClusteredDataset& data) {
  ResamplingPools p;
  p.scheme = PoolScheme::MREB1;
  p.donor_weights = detail::donor_weights(data, DonorScheme::SRS);
  p.u_pool = detail::reflate_u(fit.u_hat, fit.theta_hat.sigma2_u, true);
  p.e_pools = detail::reflate_e(data, fit.e_hat, fit.theta_hat.sigma2_e, p.donor_weights);
  return p;
}

// REB-1: centered predictors divided by the uncentered root mean square,
// residuals scaled over all N units, SRS donors.
inline ResamplingPools reb1_pools(const FitResult& fit, const ClusteredDataset& data) {
  ResamplingPools p;
  p.scheme = PoolScheme::REB1;
  p.donor_weights = detail::donor_weights(data, DonorScheme::SRS);
  p.u_pool = detail::reflate_u(fit.u_hat, fit.theta_hat.sigma2_u, false);
  p.e_pools = detail::reflate_e(data, fit.e_hat, fit.theta_hat.sigma2_e,
                                detail::donor_weights(data, DonorScheme::PPS));
  return p;
}

// Untransformed predictors and residuals.
inline ResamplingPools identity_pools(const FitResult& fit, const ClusteredDataset& data,
                                      DonorScheme donors) {
  ResamplingPools p;
  p.scheme = PoolScheme::Identity;
  p.donor_weights = detail::donor_weights(data, donors);
  p.u_pool = fit.u_hat;
  p.e_pools = detail::split(data, fit.e_hat);
  return p;
}

// EBLUPs scaled (uncentered) to mean square sigma2_u and conditional
// residuals scaled to mean square sigma2_e in a single global pool.
inline ResamplingPools cgr_pools(const FitResult& fit, const ClusteredDataset& data) {
  ResamplingPools p;
  p.scheme = PoolScheme::CGR;
  p.residual_draw = ResidualDraw::GlobalPool;
  p.donor_weights = detail::donor_weights(data, DonorScheme::PPS);
  const double D = static_cast<double>(data.num_clusters());
  const double N = static_cast<double>(data.num_units());
  const double msu = fit.u_eblup.squaredNorm() / D;
  if (!(msu > 0.0)) throw DegeneratePoolError("cluster-effect", "all EBLUPs are zero");
  p.u_pool = fit.u_eblup * (std::sqrt(fit.theta_hat.sigma2_u) / std::sqrt(msu));
  const double mse = fit.eps_hat.squaredNorm() / N;
  if (!(mse > 0.0)) throw DegeneratePoolError("residual", "all conditional residuals are zero");
  p.e_pools = detail::split(data, fit.eps_hat * (std::sqrt(fit.theta_hat.sigma2_e) / std::sqrt(mse)));
  return p;
}

}  // namespace mixedboot

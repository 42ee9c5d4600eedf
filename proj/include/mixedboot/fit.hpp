#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/toms748_solve.hpp>

#include "mixedboot/dataset.hpp"
#include "mixedboot/errors.hpp"
#include "mixedboot/likelihood.hpp"

namespace mixedboot {

struct FitOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-8;  // projected gradient norm in (sigma2_u, sigma2_e)
};

// Variance-component solution without the per-unit diagnostics.
struct ThetaFit {
  ThetaVector theta;
  double loglik = 0.0;
  bool converged = false;
  bool boundary = false;  // sigma2_u == 0 exactly
  int iterations = 0;
};

struct FitResult {
  ThetaVector theta_hat;
  Criterion criterion = Criterion::REML;
  double loglik = 0.0;
  VectorXd marginal_residuals;  // r_ij = y_ij - x_ij' beta_hat, stacked
  VectorXd u_hat;               // cluster means of r
  VectorXd e_hat;               // r_ij - u_hat_i, stacked
  VectorXd u_eblup;             // shrunken predictors
  VectorXd eps_hat;             // r_ij - u_eblup_i, stacked
  bool converged = false;
  bool boundary = false;
  int iterations = 0;
};

namespace detail {

// Method-of-moments start: OLS residuals, pooled within-cluster variance for
// sigma2_e and the between-mean variance net of sampling noise for sigma2_u.
inline double moment_start(const DesignMoments& dm, const ResponseMoments& rm) {
  const std::size_t D = dm.num_clusters();
  const Eigen::Index p = dm.p();
  MatrixXd xtx = MatrixXd::Zero(p, p);
  VectorXd xtr = VectorXd::Zero(p);
  double N = 0.0;
  for (std::size_t i = 0; i < D; ++i) {
    xtx += dm.xtx[i];
    xtr += rm.xtr.col(static_cast<Eigen::Index>(i));
    N += dm.n[i];
  }
  const VectorXd d = xtx.ldlt().solve(xtr);
  VectorXd ubar(static_cast<Eigen::Index>(D));
  double within = 0.0;
  for (std::size_t i = 0; i < D; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const double n = dm.n[i];
    const auto sx = dm.sx.col(ii);
    const MatrixXd centered = dm.xtx[i] - sx * sx.transpose() / n;
    const VectorXd xr_c = rm.xtr.col(ii) - sx * (rm.sr(ii) / n);
    within += rm.within(ii) - 2.0 * d.dot(xr_c) + d.dot(centered * d);
    ubar(ii) = (rm.sr(ii) - sx.dot(d)) / n;
  }
  const double dD = static_cast<double>(D);
  const double se0 = N > dD ? std::max(within, 0.0) / (N - dD) : 0.0;
  const double mean_u = ubar.mean();
  const double var_u = (ubar.array() - mean_u).square().sum() / (dD - 1.0);
  double noise = 0.0;
  for (std::size_t i = 0; i < D; ++i) noise += se0 / dm.n[i];
  const double su0 = std::max(0.0, var_u - noise / dD);
  if (!(se0 > 0.0)) return 1.0;
  return su0 / se0;
}

inline std::vector<double> lambda_grid(double start) {
  std::vector<double> g{0.0};
  for (int k = -12; k <= 12; ++k) g.push_back(std::pow(10.0, 0.5 * k));
  if (std::isfinite(start) && start > 0.0) g.push_back(start);
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

}  // namespace detail

// Maximizes the (weighted) criterion over sigma2_u >= 0, sigma2_e > 0.
//
// sigma2_e and beta are profiled analytically, leaving a one-dimensional
// problem in lambda = sigma2_u / sigma2_e on [0, inf). A log-spaced grid that
// includes the moment start locates the basin; the stationary point is then
// solved on the bracketing interval. lambda = 0 is returned exactly when the
// slope there is nonpositive and no interior point does better.
inline ThetaFit fit_moments(const DesignMoments& dm, const ResponseMoments& rm, Criterion criterion,
                            const VectorXd* weights = nullptr, const FitOptions& opts = {}) {
  ProfileLikelihood prof(dm, rm, criterion, weights);
  int evals = 0;
  auto eval = [&](double lam) {
    ++evals;
    return prof.at(lam);
  };

  std::vector<double> grid = detail::lambda_grid(detail::moment_start(dm, rm));
  std::vector<ProfilePoint> pts;
  pts.reserve(grid.size() + 8);
  for (double lam : grid) pts.push_back(eval(lam));

  auto best_index = [&]() {
    std::size_t b = 0;
    for (std::size_t k = 1; k < pts.size(); ++k)
      if (pts[k].value > pts[b].value) b = k;
    return b;
  };
  std::size_t b = best_index();
  // Extend upward while the best point sits on the top edge and still rises.
  while (b + 1 == pts.size() && pts[b].slope > 0.0) {
    const double next = pts[b].lambda * 10.0;
    if (next > 1e14 || evals >= opts.max_iterations) {
      throw ConvergenceError("within-cluster variance collapses to zero (lambda unbounded)",
                             pts[b].lambda * pts[b].sigma2_e, pts[b].sigma2_e);
    }
    pts.push_back(eval(next));
    b = best_index();
  }

  auto finish = [&](const ProfilePoint& pt, bool boundary, bool converged) {
    ThetaFit out;
    out.theta.beta = pt.beta;
    out.theta.sigma2_e = pt.sigma2_e;
    out.theta.sigma2_u = boundary ? 0.0 : pt.lambda * pt.sigma2_e;
    out.loglik = pt.value;
    out.boundary = boundary;
    out.converged = converged;
    out.iterations = evals;
    return out;
  };

  if (b == 0 && pts[0].slope <= 0.0) return finish(pts[0], true, true);

  // Bracket a sign change of the slope around the best grid point.
  double lo, hi;
  const ProfilePoint* plo;
  const ProfilePoint* phi;
  if (pts[b].slope > 0.0) {
    plo = &pts[b];
    phi = &pts[b + 1];
  } else {
    plo = &pts[b - 1];
    phi = &pts[b];
  }
  lo = plo->lambda;
  hi = phi->lambda;

  if (plo->slope > 0.0 && phi->slope < 0.0) {
    const int remaining = std::max(1, opts.max_iterations - evals);
    std::uintmax_t max_iter = static_cast<std::uintmax_t>(remaining);
    auto slope = [&](double lam) { return eval(lam).slope; };
    auto r = boost::math::tools::toms748_solve(slope, lo, hi, plo->slope, phi->slope,
                                               boost::math::tools::eps_tolerance<double>(50),
                                               max_iter);
    const double lam = 0.5 * (r.first + r.second);
    ProfilePoint pt = eval(lam);
    const double grad = std::abs(pt.slope) / pt.sigma2_e;
    const bool collapsed = (r.second - r.first) <= 8.0 * std::numeric_limits<double>::epsilon() *
                                                       std::max(1.0, std::abs(lam));
    if (!(grad <= opts.gradient_tolerance || collapsed) || evals > opts.max_iterations) {
      throw ConvergenceError("stationary point not reached", pt.lambda * pt.sigma2_e, pt.sigma2_e);
    }
    return finish(pt, false, true);
  }

  // Slope signs do not bracket (non-concave stretch): fall back to a
  // derivative-free search over [lambda_{b-1}, lambda_{b+1}].
  lo = pts[b == 0 ? 0 : b - 1].lambda;
  hi = pts[std::min(b + 1, pts.size() - 1)].lambda;
  std::uintmax_t max_iter = static_cast<std::uintmax_t>(std::max(1, opts.max_iterations - evals));
  auto neg = [&](double lam) { return -eval(lam).value; };
  auto r = boost::math::tools::brent_find_minima(neg, lo, hi, 52, max_iter);
  ProfilePoint pt = eval(r.first);
  if (pt.value < pts[b].value) pt = pts[b];
  if (pt.lambda == 0.0 && pt.slope <= 0.0) return finish(pt, true, true);
  const double grad = std::abs(pt.slope) / pt.sigma2_e;
  return finish(pt, false, grad <= std::sqrt(opts.gradient_tolerance));
}

// Per-unit quantities implied by theta: marginal residuals, cluster-mean
// predictors, within-cluster residuals, EBLUPs and conditional residuals.
inline void fill_predictions(const ClusteredDataset& data, FitResult& fr) {
  const std::size_t D = data.num_clusters();
  const double su = fr.theta_hat.sigma2_u;
  const double se = fr.theta_hat.sigma2_e;
  fr.marginal_residuals = data.y() - data.X() * fr.theta_hat.beta;
  fr.u_hat.resize(static_cast<Eigen::Index>(D));
  fr.u_eblup.resize(static_cast<Eigen::Index>(D));
  fr.e_hat.resize(fr.marginal_residuals.size());
  fr.eps_hat.resize(fr.marginal_residuals.size());
  for (std::size_t i = 0; i < D; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const auto off = static_cast<Eigen::Index>(data.offset(i));
    const int n = data.size(i);
    const auto r = fr.marginal_residuals.segment(off, n);
    const double u = r.mean();
    fr.u_hat(ii) = u;
    fr.u_eblup(ii) = su > 0.0 ? (n * su / (se + n * su)) * u : 0.0;
    fr.e_hat.segment(off, n) = r.array() - u;
    fr.eps_hat.segment(off, n) = r.array() - fr.u_eblup(ii);
  }
}

// Fits the random intercept model by ML or REML.
inline FitResult fit(const ClusteredDataset& data, Criterion criterion, const FitOptions& opts = {},
                     const std::optional<VectorXd>& weights = std::nullopt) {
  const DesignMoments dm = DesignMoments::of(data);
  const ResponseMoments rm = ResponseMoments::of(data, ols_coefficients(data));
  const ThetaFit tf = fit_moments(dm, rm, criterion, weights ? &*weights : nullptr, opts);
  FitResult fr;
  fr.theta_hat = tf.theta;
  fr.criterion = criterion;
  fr.loglik = tf.loglik;
  fr.converged = tf.converged;
  fr.boundary = tf.boundary;
  fr.iterations = tf.iterations;
  fill_predictions(data, fr);
  return fr;
}

}  // namespace mixedboot

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mixedboot/dataset.hpp"
#include "mixedboot/errors.hpp"

namespace mixedboot {

// Gaussian working likelihood of the random intercept model.
//
// With lambda = sigma2_u / sigma2_e every cluster covariance factors as
// Sigma_i = sigma2_e * (I + lambda 11'), with
//   Sigma_i^{-1} = sigma2_e^{-1} (I - g_i 11'),  g_i = lambda / (1 + n_i lambda)
//   log|Sigma_i| = n_i log sigma2_e + log(1 + n_i lambda).
// All additive 2*pi constants are dropped, in ML and REML alike.

// Per-cluster moments that depend only on the design.
struct DesignMoments {
  std::vector<int> n;
  std::vector<MatrixXd> xtx;  // X_i' X_i
  MatrixXd sx;                // column i holds X_i' 1

  std::size_t num_clusters() const noexcept { return n.size(); }
  Eigen::Index p() const noexcept { return sx.rows(); }

  static DesignMoments of(const ClusteredDataset& data) {
    DesignMoments m;
    const std::size_t D = data.num_clusters();
    m.n = data.cluster_sizes();
    m.xtx.resize(D);
    m.sx.resize(data.num_covariates(), static_cast<Eigen::Index>(D));
    for (std::size_t i = 0; i < D; ++i) {
      const auto Xi = data.design(i);
      m.xtx[i] = Xi.transpose() * Xi;
      m.sx.col(static_cast<Eigen::Index>(i)) = Xi.colwise().sum().transpose();
    }
    return m;
  }

  DesignMoments select(std::span<const std::size_t> picks) const {
    DesignMoments m;
    m.n.reserve(picks.size());
    m.xtx.reserve(picks.size());
    m.sx.resize(p(), static_cast<Eigen::Index>(picks.size()));
    Eigen::Index k = 0;
    for (std::size_t h : picks) {
      m.n.push_back(n[h]);
      m.xtx.push_back(xtx[h]);
      m.sx.col(k++) = sx.col(static_cast<Eigen::Index>(h));
    }
    return m;
  }
};

// Per-cluster moments of the residual r = y - X * offset. Storing residuals
// about a nearby coefficient vector keeps the quadratic forms well conditioned
// even when the noise is tiny relative to the fitted mean.
struct ResponseMoments {
  VectorXd offset;  // coefficient vector the residuals are taken about
  MatrixXd xtr;     // column i holds X_i' r_i
  VectorXd sr;      // 1' r_i
  VectorXd within;  // sum_j (r_ij - mean_i r)^2

  // `residual` is stacked like the dataset rows: r = y - X * offset.
  static ResponseMoments of_residuals(const ClusteredDataset& data, const VectorXd& offset,
                                      const Eigen::Ref<const VectorXd>& residual) {
    ResponseMoments m;
    const std::size_t D = data.num_clusters();
    m.offset = offset;
    m.xtr.resize(data.num_covariates(), static_cast<Eigen::Index>(D));
    m.sr.resize(static_cast<Eigen::Index>(D));
    m.within.resize(static_cast<Eigen::Index>(D));
    for (std::size_t i = 0; i < D; ++i) {
      const auto ri = residual.segment(static_cast<Eigen::Index>(data.offset(i)), data.size(i));
      const auto ii = static_cast<Eigen::Index>(i);
      m.xtr.col(ii) = data.design(i).transpose() * ri;
      const double s = ri.sum();
      m.sr(ii) = s;
      m.within(ii) = (ri.array() - s / data.size(i)).square().sum();
    }
    return m;
  }

  static ResponseMoments of(const ClusteredDataset& data, const VectorXd& offset) {
    const VectorXd r = data.y() - data.X() * offset;
    return of_residuals(data, offset, r);
  }

  ResponseMoments select(std::span<const std::size_t> picks) const {
    ResponseMoments m;
    m.offset = offset;
    const auto k = static_cast<Eigen::Index>(picks.size());
    m.xtr.resize(xtr.rows(), k);
    m.sr.resize(k);
    m.within.resize(k);
    Eigen::Index c = 0;
    for (std::size_t h : picks) {
      const auto hh = static_cast<Eigen::Index>(h);
      m.xtr.col(c) = xtr.col(hh);
      m.sr(c) = sr(hh);
      m.within(c) = within(hh);
      ++c;
    }
    return m;
  }
};

// Ordinary least squares coefficients of the stacked design.
inline VectorXd ols_coefficients(const ClusteredDataset& data) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(data.X());
  if (qr.rank() < data.num_covariates())
    throw SingularDesignError("stacked design matrix is rank deficient");
  return qr.solve(data.y());
}

// Profile of the (optionally cluster-weighted) log-likelihood in
// lambda = sigma2_u / sigma2_e with beta and sigma2_e maximized out.
struct ProfilePoint {
  double lambda = 0.0;
  double value = 0.0;     // criterion value with beta, sigma2_e profiled
  double slope = 0.0;     // d value / d lambda
  double sigma2_e = 0.0;  // profiled sigma2_e
  VectorXd beta;          // GLS beta at lambda
};

class ProfileLikelihood {
 public:
  ProfileLikelihood(const DesignMoments& design, const ResponseMoments& resp, Criterion criterion,
                    const VectorXd* weights = nullptr)
      : design_(design), resp_(resp), criterion_(criterion), weights_(weights) {
    const std::size_t D = design_.num_clusters();
    if (weights_ != nullptr) {
      if (static_cast<std::size_t>(weights_->size()) != D)
        throw InvalidArgument("cluster weights must have length D");
      for (Eigen::Index i = 0; i < weights_->size(); ++i)
        if (!((*weights_)(i) > 0.0) || !std::isfinite((*weights_)(i)))
          throw InvalidArgument("cluster weights must be strictly positive");
    }
    n_weighted_ = 0.0;
    for (std::size_t i = 0; i < D; ++i) n_weighted_ += weight(i) * design_.n[i];
    dof_ = criterion_ == Criterion::REML ? n_weighted_ - static_cast<double>(design_.p())
                                         : n_weighted_;
    if (!(dof_ > 0.0)) throw SingularDesignError("no residual degrees of freedom");
  }

  Criterion criterion() const noexcept { return criterion_; }
  double weighted_units() const noexcept { return n_weighted_; }

  // Profiled criterion at lambda >= 0.
  ProfilePoint at(double lambda) const {
    Pieces pc = pieces(lambda, true);
    ProfilePoint pt;
    pt.lambda = lambda;
    pt.sigma2_e = pc.q / dof_;
    pt.beta = resp_.offset + pc.delta;
    double v = dof_ * std::log(pt.sigma2_e) + pc.logdet_v + dof_;
    if (criterion_ == Criterion::REML) v += pc.logdet_m;
    pt.value = -0.5 * v;
    double slope = -0.5 * pc.dlogdet_v + 0.5 * pc.dq_neg / pt.sigma2_e;
    if (criterion_ == Criterion::REML) slope += 0.5 * pc.dlogdet_m_neg;
    pt.slope = slope;
    return pt;
  }

  // Criterion at fixed (sigma2_u, sigma2_e) with only beta profiled out.
  double value(double sigma2_u, double sigma2_e, VectorXd* beta_out = nullptr) const {
    const double lambda = sigma2_u / sigma2_e;
    Pieces pc = pieces(lambda, false);
    double v = n_weighted_ * std::log(sigma2_e) + pc.logdet_v + pc.q / sigma2_e;
    if (criterion_ == Criterion::REML)
      v += pc.logdet_m - static_cast<double>(design_.p()) * std::log(sigma2_e);
    if (beta_out != nullptr) *beta_out = resp_.offset + pc.delta;
    return -0.5 * v;
  }

 private:
  struct Pieces {
    VectorXd delta;
    double q = 0.0;
    double logdet_v = 0.0;
    double logdet_m = 0.0;
    double dlogdet_v = 0.0;      // d/dlambda sum w log(1 + n lambda)
    double dq_neg = 0.0;         // -dQ/dlambda
    double dlogdet_m_neg = 0.0;  // -d/dlambda log|M|
  };

  double weight(std::size_t i) const {
    return weights_ == nullptr ? 1.0 : (*weights_)(static_cast<Eigen::Index>(i));
  }

  Pieces pieces(double lambda, bool with_slope) const {
    const std::size_t D = design_.num_clusters();
    const Eigen::Index p = design_.p();
    MatrixXd M = MatrixXd::Zero(p, p);
    VectorXd c = VectorXd::Zero(p);
    Pieces pc;
    double q0 = 0.0;
    for (std::size_t i = 0; i < D; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double w = weight(i);
      const double n = design_.n[i];
      const double denom = 1.0 + n * lambda;
      const double g = lambda / denom;
      const auto sx = design_.sx.col(ii);
      M.noalias() += w * design_.xtx[i];
      M.noalias() -= (w * g) * (sx * sx.transpose());
      c.noalias() += w * resp_.xtr.col(ii);
      c.noalias() -= (w * g * resp_.sr(ii)) * sx;
      q0 += w * (resp_.within(ii) + resp_.sr(ii) * resp_.sr(ii) / (n * denom));
      pc.logdet_v += w * std::log1p(n * lambda);
    }
    Eigen::LDLT<MatrixXd> ldlt(M);
    const VectorXd dvec = ldlt.vectorD();
    const double dmax = dvec.cwiseAbs().maxCoeff();
    if (ldlt.info() != Eigen::Success || !(dvec.minCoeff() > 1e-12 * dmax))
      throw SingularDesignError("weighted normal equations are singular");
    pc.delta = ldlt.solve(c);
    pc.q = std::max(q0 - c.dot(pc.delta), 0.0);
    if (!(pc.q > 0.0)) throw FitError("zero residual quadratic form");
    pc.logdet_m = dvec.array().log().sum();
    if (!with_slope) return pc;

    MatrixXd dM = MatrixXd::Zero(p, p);
    for (std::size_t i = 0; i < D; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const double w = weight(i);
      const double n = design_.n[i];
      const double denom = 1.0 + n * lambda;
      const auto sx = design_.sx.col(ii);
      const double s = resp_.sr(ii) - sx.dot(pc.delta);
      pc.dlogdet_v += w * n / denom;
      pc.dq_neg += w * s * s / (denom * denom);
      if (criterion_ == Criterion::REML) dM.noalias() += (w / (denom * denom)) * (sx * sx.transpose());
    }
    if (criterion_ == Criterion::REML) pc.dlogdet_m_neg = ldlt.solve(dM).trace();
    return pc;
  }

  const DesignMoments& design_;
  const ResponseMoments& resp_;
  Criterion criterion_;
  const VectorXd* weights_;
  double n_weighted_ = 0.0;
  double dof_ = 0.0;
};

struct ProfileValue {
  double value = 0.0;
  VectorXd beta_gls;
};

// Log-likelihood (or REML criterion) at (sigma2_u, sigma2_e) with beta
// replaced by its weighted GLS estimate. The weighted criterion is
// sum_i w_i l_i.
inline ProfileValue profile_loglik(const ClusteredDataset& data, double sigma2_u, double sigma2_e,
                                   Criterion criterion,
                                   const std::optional<VectorXd>& weights = std::nullopt) {
  if (!(sigma2_u >= 0.0) || !(sigma2_e > 0.0))
    throw InvalidArgument("variance components out of domain");
  const DesignMoments dm = DesignMoments::of(data);
  const ResponseMoments rm = ResponseMoments::of(data, ols_coefficients(data));
  ProfileLikelihood prof(dm, rm, criterion, weights ? &*weights : nullptr);
  ProfileValue out;
  out.value = prof.value(sigma2_u, sigma2_e, &out.beta_gls);
  return out;
}

// Log-likelihood at an arbitrary theta (no profiling). For REML this is
// l(theta) - 0.5 log|X' Sigma^{-1} X|, whose beta-maximizer is the GLS estimate.
inline double loglik_at(const ClusteredDataset& data, const ThetaVector& theta,
                        Criterion criterion = Criterion::ML, const VectorXd* weights = nullptr) {
  theta.validate();
  const double se = theta.sigma2_e;
  const double su = theta.sigma2_u;
  const Eigen::Index p = data.num_covariates();
  double v = 0.0;
  MatrixXd M = MatrixXd::Zero(p, p);
  for (std::size_t i = 0; i < data.num_clusters(); ++i) {
    const double n = data.size(i);
    const VectorXd r = data.response(i) - data.design(i) * theta.beta;
    const double s = r.sum();
    const double within = (r.array() - s / n).square().sum();
    const double tot = se + n * su;
    const double w = weights ? (*weights)(static_cast<Eigen::Index>(i)) : 1.0;
    v += w * ((n - 1.0) * std::log(se) + std::log(tot) + within / se + s * s / (n * tot));
    if (criterion == Criterion::REML) {
      const auto Xi = data.design(i);
      const VectorXd sx = Xi.colwise().sum().transpose();
      M += w * (Xi.transpose() * Xi - (su / tot) * sx * sx.transpose()) / se;
    }
  }
  if (criterion == Criterion::REML) {
    Eigen::LDLT<MatrixXd> ldlt(M);
    v += ldlt.vectorD().array().log().sum();
  }
  return -0.5 * v;
}

// Gradient of loglik_at with respect to (beta, sigma2_u, sigma2_e).
//
// The beta block is X' Sigma^{-1} (y - X beta), the exact derivative of the
// 1/2-scaled log-likelihood.
inline VectorXd score_at(const ClusteredDataset& data, const ThetaVector& theta,
                         Criterion criterion = Criterion::ML, const VectorXd* weights = nullptr) {
  theta.validate();
  if (theta.beta.size() != data.num_covariates())
    throw InvalidArgument("theta has the wrong number of fixed effects");
  const double se = theta.sigma2_e;
  const double su = theta.sigma2_u;
  const Eigen::Index p = data.num_covariates();
  VectorXd g = VectorXd::Zero(p + 2);
  MatrixXd M = MatrixXd::Zero(p, p);
  MatrixXd Mu = MatrixXd::Zero(p, p);  // X' Sigma^-1 Z Z' Sigma^-1 X
  MatrixXd Me = MatrixXd::Zero(p, p);  // X' Sigma^-2 X
  for (std::size_t i = 0; i < data.num_clusters(); ++i) {
    const double n = data.size(i);
    const auto Xi = data.design(i);
    const VectorXd r = data.response(i) - Xi * theta.beta;
    const double s = r.sum();
    const double within = (r.array() - s / n).square().sum();
    const double tot = se + n * su;
    const double c = su / tot;
    const VectorXd sx = Xi.colwise().sum().transpose();
    const double w = weights ? (*weights)(static_cast<Eigen::Index>(i)) : 1.0;

    g.head(p) += w * (Xi.transpose() * r - c * s * sx) / se;
    g(p) += w * (-0.5 * n / tot + 0.5 * s * s / (tot * tot));
    g(p + 1) += w * (-0.5 * ((n - 1.0) / se + 1.0 / tot) +
                     0.5 * (within / (se * se) + (s * s / n) / (tot * tot)));
    if (criterion == Criterion::REML) {
      const MatrixXd xtx = Xi.transpose() * Xi;
      M += w * (xtx - c * sx * sx.transpose()) / se;
      Mu += w * (sx * sx.transpose()) / (tot * tot);
      Me += w * (xtx - (2.0 * c - n * c * c) * sx * sx.transpose()) / (se * se);
    }
  }
  if (criterion == Criterion::REML) {
    Eigen::LDLT<MatrixXd> ldlt(M);
    g(p) += 0.5 * ldlt.solve(Mu).trace();
    g(p + 1) += 0.5 * ldlt.solve(Me).trace();
  }
  return g;
}

}  // namespace mixedboot

#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "mixedboot/fit.hpp"
#include "mixedboot/likelihood.hpp"
#include "mixedboot/simlab.hpp"
#include "oracles.hpp"

using namespace mixedboot;

namespace {

ClusteredDataset small_intercept_only() {
  // D = 3, n = (2, 1, 3), intercept only.
  VectorXd y(6);
  y << 0.3, -0.1, 0.8, 1.2, 0.5, 0.9;
  return ClusteredDataset({2, 1, 3}, y, MatrixXd::Ones(6, 1));
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(Dataset, RejectsBadShapes) {
  EXPECT_THROW(ClusteredDataset({3}, VectorXd::Zero(3), MatrixXd::Ones(3, 1)), InvalidArgument);
  EXPECT_THROW(ClusteredDataset({1, 0}, VectorXd::Zero(1), MatrixXd::Ones(1, 1)), InvalidArgument);
  EXPECT_THROW(ClusteredDataset({1, 2}, VectorXd::Zero(2), MatrixXd::Ones(2, 1)), InvalidArgument);
  VectorXd y = VectorXd::Zero(3);
  y(1) = std::nan("");
  EXPECT_THROW(ClusteredDataset({1, 2}, y, MatrixXd::Ones(3, 1)), InvalidArgument);
}

TEST(ProfileLoglik, IndependenceCaseIsOls) {
  const auto t = oracle::theta({1.0, 2.0}, 0.0, 0.3);
  const auto d = oracle::make_dataset(std::vector<int>(12, 1), t, 5);
  const VectorXd ols = d.X().colPivHouseholderQr().solve(d.y());
  const double rss = (d.y() - d.X() * ols).squaredNorm();
  const double se = 0.3;
  const double expect = -0.5 * (12 * std::log(se) + rss / se);
  const auto pv = profile_loglik(d, 0.0, se, Criterion::ML);
  EXPECT_NEAR(pv.value, expect, 1e-10);
  EXPECT_LT((pv.beta_gls - ols).norm(), 1e-10);
}

TEST(ProfileLoglik, MatchesDenseOracleSmall) {
  const auto d = small_intercept_only();
  for (Criterion c : {Criterion::ML, Criterion::REML}) {
    const auto pv = profile_loglik(d, 0.04, 0.16, c);
    const auto ref = oracle::dense_profile(d, 0.04, 0.16, c);
    EXPECT_LT(rel(pv.value, ref.value), 1e-10);
    EXPECT_NEAR(pv.beta_gls(0), ref.beta(0), 1e-12);
    // Same value from the full N x N covariance at the GLS beta.
    ThetaVector t{pv.beta_gls, 0.04, 0.16};
    EXPECT_LT(rel(pv.value, oracle::dense_loglik(d, t, c)), 1e-10);
  }
}

TEST(ProfileLoglik, DoublingWeightsScalesMlValue) {
  const auto d = oracle::make_dataset({2, 3, 1, 4, 2}, oracle::theta({1.0, 2.0}, 0.04, 0.16), 9);
  VectorXd w(5);
  w << 0.5, 1.5, 2.0, 0.7, 1.1;
  const auto a = profile_loglik(d, 0.05, 0.2, Criterion::ML, w);
  const auto b = profile_loglik(d, 0.05, 0.2, Criterion::ML, VectorXd(2.0 * w));
  EXPECT_LT(rel(b.value, 2.0 * a.value), 1e-12);
  EXPECT_LT((a.beta_gls - b.beta_gls).norm(), 1e-12);
  const auto ref = oracle::dense_profile(d, 0.05, 0.2, Criterion::ML, w);
  EXPECT_LT(rel(a.value, ref.value), 1e-10);
}

TEST(ProfileLoglik, ShermanMorrisonEqualsDense) {
  RandomSource rng(2024, 0);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<int> sizes;
    int N = 0;
    while (N < 30) {
      const int n = 1 + static_cast<int>(rng.uniform() * 6);
      sizes.push_back(n);
      N += n;
    }
    const auto truth = oracle::theta({1.0, -0.5, 2.0}, 0.1 * rng.uniform(), 0.05 + rng.uniform());
    const auto d = oracle::make_dataset(sizes, truth, 100 + rep);
    ThetaVector t = truth;
    t.beta(1) += 0.3 * rng.uniform();
    t.sigma2_u = 2.0 * rng.uniform();
    t.sigma2_e = 0.01 + rng.uniform();
    for (Criterion c : {Criterion::ML, Criterion::REML}) {
      EXPECT_LT(rel(loglik_at(d, t, c), oracle::dense_loglik(d, t, c)), 1e-10);
      const auto pv = profile_loglik(d, t.sigma2_u, t.sigma2_e, c);
      EXPECT_LT(rel(pv.value, oracle::dense_profile(d, t.sigma2_u, t.sigma2_e, c).value), 1e-10);
    }
  }
}

TEST(ProfileLoglik, MlAndRemlShareGlsBeta) {
  const auto d = oracle::make_dataset({3, 1, 4, 2, 5}, oracle::theta({1.0, 2.0}, 0.04, 0.16), 3);
  const auto a = profile_loglik(d, 0.07, 0.11, Criterion::ML);
  const auto b = profile_loglik(d, 0.07, 0.11, Criterion::REML);
  EXPECT_LT((a.beta_gls - b.beta_gls).norm(), 1e-8);
}

TEST(ProfileLoglik, SingularDesignThrows) {
  auto d = oracle::make_dataset({3, 2, 4}, oracle::theta({1.0, 2.0}, 0.04, 0.16), 1);
  MatrixXd X(d.num_units(), 3);
  X << d.X(), d.X().col(1);
  const ClusteredDataset bad(d.cluster_sizes(), d.y(), X);
  EXPECT_THROW(profile_loglik(bad, 0.1, 0.1, Criterion::ML), SingularDesignError);
  EXPECT_THROW(fit(bad, Criterion::REML), SingularDesignError);
}

TEST(Fit, MatchesGridSearchOracle) {
  const std::vector<std::vector<int>> designs{
      {1, 2, 3, 4}, {2, 2, 2, 2, 2, 2}, {5, 1, 3, 7, 2}, {3, 3, 4, 4, 5, 5}, {1, 1, 2, 6, 8, 4}};
  for (std::size_t k = 0; k < designs.size(); ++k) {
    const auto d = oracle::make_dataset(designs[k], oracle::theta({1.0, 2.0}, 0.3, 0.2), 40 + k);
    for (Criterion c : {Criterion::ML, Criterion::REML}) {
      const FitResult fr = fit(d, c);
      const auto g = oracle::grid_search(d, c);
      EXPECT_NEAR(fr.theta_hat.sigma2_u, g.sigma2_u, 1e-3) << "design " << k;
      EXPECT_NEAR(fr.theta_hat.sigma2_e, g.sigma2_e, 1e-3) << "design " << k;
      for (Eigen::Index j = 0; j < 2; ++j) EXPECT_NEAR(fr.theta_hat.beta(j), g.beta(j), 1e-3);
      // Never worse than the oracle's optimum.
      EXPECT_GE(fr.loglik + 1e-9,
                oracle::dense_profile(d, g.sigma2_u, g.sigma2_e, c).value);
    }
  }
}

TEST(Fit, WeightedMatchesWeightedGridOracle) {
  const auto d = oracle::make_dataset({1, 2, 3, 4}, oracle::theta({1.0, 2.0}, 0.3, 0.2), 8);
  VectorXd w(4);
  w << 0.4, 1.7, 0.9, 1.3;
  const FitResult fr = fit(d, Criterion::ML, {}, w);
  const auto g = oracle::grid_search(d, Criterion::ML, w);
  EXPECT_NEAR(fr.theta_hat.sigma2_u, g.sigma2_u, 1e-3);
  EXPECT_NEAR(fr.theta_hat.sigma2_e, g.sigma2_e, 1e-3);
}

TEST(Fit, SetOneScoreVanishesAndEstimatesNearTruth) {
  const auto sc = *preset("set1-balanced");
  const auto [d, truth] = generate_dataset(sc, 0);
  for (Criterion c : {Criterion::ML, Criterion::REML}) {
    const FitResult fr = fit(d, c);
    ASSERT_TRUE(fr.converged);
    ASSERT_FALSE(fr.boundary);
    EXPECT_LE(score_at(d, fr.theta_hat, c).norm(), 1e-6);
    EXPECT_NEAR(fr.theta_hat.sigma2_u, truth.sigma2_u, 0.03);
    EXPECT_NEAR(fr.theta_hat.sigma2_e, truth.sigma2_e, 0.03);
    EXPECT_NEAR(fr.theta_hat.beta(1), truth.beta(1), 0.2);
  }
}

TEST(Fit, ScoreMatchesFiniteDifferences) {
  const auto d = oracle::make_dataset({1, 2, 3, 4, 5, 2}, oracle::theta({1.0, 2.0}, 0.2, 0.3), 17);
  RandomSource rng(99, 1);
  const double h = 1e-5;
  for (int rep = 0; rep < 20; ++rep) {
    ThetaVector t = oracle::theta({0.5 + rng.uniform(), 1.5 + rng.uniform()},
                                  0.05 + rng.uniform(), 0.05 + rng.uniform());
    for (Criterion c : {Criterion::ML, Criterion::REML}) {
      const VectorXd g = score_at(d, t, c);
      VectorXd x = t.packed();
      for (Eigen::Index k = 0; k < x.size(); ++k) {
        VectorXd a = x, b = x;
        a(k) += h;
        b(k) -= h;
        const double fd = (loglik_at(d, ThetaVector::unpack(a), c) -
                           loglik_at(d, ThetaVector::unpack(b), c)) /
                          (2.0 * h);
        EXPECT_LE(std::abs(g(k) - fd), 1e-4 * std::max(1.0, std::abs(fd)))
            << "component " << k << " rep " << rep;
      }
    }
  }
}

TEST(Fit, BetaScoreZeroAtGls) {
  const auto d = oracle::make_dataset({3, 1, 4, 2, 5}, oracle::theta({1.0, 2.0}, 0.04, 0.16), 4);
  const auto pv = profile_loglik(d, 0.06, 0.13, Criterion::ML);
  const VectorXd g = score_at(d, ThetaVector{pv.beta_gls, 0.06, 0.13}, Criterion::ML);
  EXPECT_LT(g.head(2).norm(), 1e-10);
}

TEST(Fit, PredictorIdentities) {
  const auto sc = *preset("set1-unbalanced");
  const auto [d, truth] = generate_dataset(sc, 3);
  const FitResult fr = fit(d, Criterion::REML);
  const double su = fr.theta_hat.sigma2_u, se = fr.theta_hat.sigma2_e;
  for (std::size_t i = 0; i < d.num_clusters(); ++i) {
    const auto off = static_cast<Eigen::Index>(d.offset(i));
    const int n = d.size(i);
    const auto ii = static_cast<Eigen::Index>(i);
    EXPECT_NEAR(fr.e_hat.segment(off, n).sum(), 0.0, 1e-12);
    EXPECT_NEAR(fr.u_hat(ii), fr.marginal_residuals.segment(off, n).mean(), 1e-14);
    EXPECT_NEAR(fr.u_eblup(ii), n * su / (se + n * su) * fr.u_hat(ii), 1e-14);
    if (n == 1) EXPECT_EQ(fr.e_hat(off), 0.0);
  }
  const VectorXd r = d.y() - d.X() * fr.theta_hat.beta;
  EXPECT_LT((r - fr.marginal_residuals).norm(), 1e-12);
}

TEST(Fit, InvariantUnderPermutations) {
  const auto d = oracle::make_dataset({2, 5, 1, 3, 4, 6, 2}, oracle::theta({1.0, 2.0}, 0.2, 0.3), 21);
  const FitResult a = fit(d, Criterion::REML);
  // Reverse cluster order and reverse units inside each cluster.
  std::vector<VectorXd> ys;
  std::vector<MatrixXd> Xs;
  for (std::size_t k = d.num_clusters(); k-- > 0;) {
    ys.push_back(d.response(k).reverse());
    Xs.push_back(d.design(k).colwise().reverse());
  }
  const FitResult b = fit(ClusteredDataset::from_clusters(ys, Xs), Criterion::REML);
  EXPECT_LT((a.theta_hat.packed() - b.theta_hat.packed()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Fit, NoiselessDataGivesBoundary) {
  // Exact linear response plus +-1e-8 jitter that averages to zero within
  // each cluster, so the cluster means carry no between-cluster signal.
  std::vector<int> sizes(6, 4);
  const auto t = oracle::theta({1.0, 2.0}, 0.0, 1.0);
  auto d = oracle::make_dataset(sizes, t, 2);
  VectorXd y = d.X() * t.beta;
  for (Eigen::Index r = 0; r < y.size(); ++r) y(r) += (r % 2 == 0 ? 1e-8 : -1e-8);
  const FitResult fr = fit(d.with_responses(y), Criterion::ML);
  EXPECT_TRUE(fr.converged);
  EXPECT_TRUE(fr.boundary);
  EXPECT_EQ(fr.theta_hat.sigma2_u, 0.0);
  EXPECT_GT(fr.theta_hat.sigma2_e, 0.0);
  EXPECT_LT(fr.theta_hat.sigma2_e, 1.5e-16);
  EXPECT_TRUE((fr.u_eblup.array() == 0.0).all());
}

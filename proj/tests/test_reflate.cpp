#include <cmath>

#include <gtest/gtest.h>

#include "mixedboot/fit.hpp"
#include "mixedboot/reflate.hpp"
#include "mixedboot/simlab.hpp"
#include "oracles.hpp"

using namespace mixedboot;

namespace {

// Fit-like object with hand-set predictors for D = 3 clusters of size 2.
struct HandFit {
  ClusteredDataset data;
  FitResult fit;
};

HandFit hand_fit(const VectorXd& u, double su, double se) {
  HandFit h{ClusteredDataset({2, 2, 2}, VectorXd::Zero(6), MatrixXd::Ones(6, 1)), {}};
  h.fit.theta_hat = ThetaVector{VectorXd::Zero(1), su, se};
  h.fit.u_hat = u;
  h.fit.e_hat.resize(6);
  h.fit.e_hat << 0.5, -0.5, 1.0, -1.0, 0.25, -0.25;
  return h;
}

// Probability-weighted moments, written out independently of exact_moments.
double weighted_e_second(const ResamplingPools& p) {
  double m = 0.0;
  for (std::size_t i = 0; i < p.e_pools.size(); ++i)
    m += p.donor_weights(static_cast<Eigen::Index>(i)) * p.e_pools[i].squaredNorm() /
         static_cast<double>(p.e_pools[i].size());
  return m;
}

}  // namespace

TEST(Reflate, HandArithmeticPreb1) {
  VectorXd u(3);
  u << 1, 2, 6;
  const auto h = hand_fit(u, 1.0, 1.0);
  const auto p = preb1_pools(h.fit, h.data);
  VectorXd expect(3);
  expect << -2, -1, 3;
  expect /= std::sqrt(14.0 / 3.0);
  EXPECT_LT((p.u_pool - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Reflate, HandArithmeticReb1UsesUncenteredScale) {
  VectorXd u(3);
  u << 1, 2, 6;
  const auto h = hand_fit(u, 1.0, 1.0);
  const auto p = reb1_pools(h.fit, h.data);
  VectorXd expect(3);
  expect << -2, -1, 3;
  expect /= std::sqrt(41.0 / 3.0);
  EXPECT_LT((p.u_pool - expect).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_NEAR(p.u_pool.squaredNorm() / 3.0, 14.0 / 41.0, 1e-14);
}

TEST(Reflate, Reb1EqualsPreb1WhenPredictorsCentered) {
  VectorXd u(3);
  u << -1, 0.5, 0.5;
  const auto h = hand_fit(u, 0.7, 1.0);
  EXPECT_LT((reb1_pools(h.fit, h.data).u_pool - preb1_pools(h.fit, h.data).u_pool).norm(), 1e-14);
}

TEST(Reflate, ZeroClusterVarianceGivesZeroPool) {
  VectorXd u(3);
  u << 1, 2, 6;
  const auto h = hand_fit(u, 0.0, 1.0);
  EXPECT_TRUE((preb1_pools(h.fit, h.data).u_pool.array() == 0.0).all());
  EXPECT_TRUE((reb1_pools(h.fit, h.data).u_pool.array() == 0.0).all());
}

TEST(Reflate, ConstructionIdentities) {
  for (const char* name : {"set1-unbalanced", "set2-unbalanced"}) {
    const auto [d, t] = generate_dataset(*preset(name), 1);
    const FitResult fr = fit(d, Criterion::REML);
    for (const auto& p : {preb1_pools(fr, d), mreb1_pools(fr, d)}) {
      EXPECT_NEAR(p.u_pool.mean(), 0.0, 1e-12);
      EXPECT_NEAR(p.u_pool.squaredNorm() / p.u_pool.size(), fr.theta_hat.sigma2_u, 1e-12);
      EXPECT_NEAR(weighted_e_second(p), fr.theta_hat.sigma2_e, 1e-12);
      EXPECT_NEAR(p.donor_weights.sum(), 1.0, 1e-12);
      EXPECT_TRUE((p.donor_weights.array() > 0.0).all());
      for (std::size_t i = 0; i < d.num_clusters(); ++i)
        EXPECT_EQ(p.e_pools[i].size(), d.size(i));
    }
    const auto pp = preb1_pools(fr, d);
    for (std::size_t i = 0; i < d.num_clusters(); ++i)
      EXPECT_DOUBLE_EQ(pp.donor_weights(static_cast<Eigen::Index>(i)),
                       d.size(i) / static_cast<double>(d.num_units()));
  }
}

TEST(Reflate, BalancedPoolsCoincide) {
  const auto [d, t] = generate_dataset(*preset("set1-balanced"), 2);
  const FitResult fr = fit(d, Criterion::REML);
  const auto a = preb1_pools(fr, d), b = mreb1_pools(fr, d), c = reb1_pools(fr, d);
  EXPECT_LT((a.u_pool - b.u_pool).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((a.u_pool - c.u_pool).cwiseAbs().maxCoeff(), 1e-12);
  for (std::size_t i = 0; i < d.num_clusters(); ++i) {
    EXPECT_LT((a.e_pools[i] - b.e_pools[i]).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.e_pools[i] - c.e_pools[i]).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_LT((a.donor_weights.array() - 0.01).abs().maxCoeff(), 1e-15);
}

TEST(Reflate, Mreb1SingletonsExceptOne) {
  // Only the size-2 cluster has nonzero residuals; its weight is 1/(2D).
  const std::vector<int> sizes{1, 1, 2, 1};
  const auto d = oracle::make_dataset(sizes, oracle::theta({1.0}, 0.1, 0.2), 6);
  FitResult fr;
  fr.theta_hat = ThetaVector{VectorXd::Zero(1), 0.1, 0.2};
  fr.u_hat = VectorXd::LinSpaced(4, -1.0, 1.0);
  fr.e_hat = VectorXd::Zero(5);
  fr.e_hat(2) = 0.3;
  fr.e_hat(3) = -0.3;
  const auto p = mreb1_pools(fr, d);
  const double denom = (0.09 + 0.09) / (2.0 * 4.0);
  EXPECT_NEAR(p.e_pools[2](0), 0.3 * std::sqrt(0.2 / denom), 1e-12);
  EXPECT_EQ(p.e_pools[0](0), 0.0);
  EXPECT_NEAR(weighted_e_second(p), 0.2, 1e-12);
}

TEST(Reflate, Reb1BreaksSecondMomentOnUnequalResiduals) {
  // Small clusters with large residuals, a big cluster with small ones.
  const std::vector<int> sizes{2, 2, 10};
  const auto d = oracle::make_dataset(sizes, oracle::theta({0.0}, 0.1, 0.2), 6);
  FitResult fr;
  fr.theta_hat = ThetaVector{VectorXd::Zero(1), 0.1, 0.2};
  fr.u_hat = VectorXd::LinSpaced(3, -1.0, 1.0);
  fr.e_hat = VectorXd::Zero(14);
  fr.e_hat.head(4) << 1.0, -1.0, 0.8, -0.8;
  for (int j = 0; j < 10; ++j) fr.e_hat(4 + j) = (j % 2 ? 0.05 : -0.05);
  const auto m = exact_moments(reb1_pools(fr, d));
  EXPECT_GT(std::abs(m.e_second - 0.2) / 0.2, 1e-3);
  EXPECT_NEAR(exact_moments(mreb1_pools(fr, d)).e_second, 0.2, 1e-12);
}

TEST(Reflate, IdentityPoolsAreTheFitQuantities) {
  const auto [d, t] = generate_dataset(*preset("set1-unbalanced"), 4);
  const FitResult fr = fit(d, Criterion::REML);
  const auto pps = identity_pools(fr, d, DonorScheme::PPS);
  const auto srs = identity_pools(fr, d, DonorScheme::SRS);
  EXPECT_TRUE(pps.u_pool == fr.u_hat);
  for (std::size_t i = 0; i < d.num_clusters(); ++i)
    EXPECT_TRUE(pps.e_pools[i] ==
                fr.e_hat.segment(static_cast<Eigen::Index>(d.offset(i)), d.size(i)));
  EXPECT_NEAR(srs.donor_weights(0), 0.01, 1e-15);
  // The raw predictors are generally not centered on unbalanced fits.
  EXPECT_GT(std::abs(pps.u_pool.mean()), 1e-6);
}

TEST(Reflate, CgrPoolsScaledToVarianceComponents) {
  const auto [d, t] = generate_dataset(*preset("set1-unbalanced"), 5);
  const FitResult fr = fit(d, Criterion::REML);
  const auto p = cgr_pools(fr, d);
  EXPECT_EQ(p.residual_draw, ResidualDraw::GlobalPool);
  EXPECT_NEAR(p.u_pool.squaredNorm() / p.u_pool.size(), fr.theta_hat.sigma2_u, 1e-12);
  const auto m = exact_moments(p);
  EXPECT_NEAR(m.e_second, fr.theta_hat.sigma2_e, 1e-12);
}

TEST(Reflate, CgrBalancedIsScaledPredictor) {
  const auto [d, t] = generate_dataset(*preset("set1-balanced"), 6);
  const FitResult fr = fit(d, Criterion::REML);
  const auto p = cgr_pools(fr, d);
  // Common shrinkage: pool is a positive multiple of u_hat.
  const double k = p.u_pool(0) / fr.u_hat(0);
  EXPECT_GT(k, 0.0);
  EXPECT_LT((p.u_pool - k * fr.u_hat).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Reflate, DegeneratePools) {
  VectorXd u(3);
  u << 1, 2, 6;
  auto h = hand_fit(u, 1.0, 1.0);
  h.fit.e_hat.setZero();
  EXPECT_THROW(preb1_pools(h.fit, h.data), DegeneratePoolError);
  try {
    mreb1_pools(h.fit, h.data);
  } catch (const DegeneratePoolError& e) {
    EXPECT_EQ(e.pool(), "residual");
  }
  auto z = hand_fit(VectorXd::Zero(3), 1.0, 1.0);
  z.fit.u_eblup = VectorXd::Zero(3);
  z.fit.eps_hat = z.fit.e_hat;
  EXPECT_THROW(cgr_pools(z.fit, z.data), DegeneratePoolError);
  EXPECT_THROW(preb1_pools(z.fit, z.data), DegeneratePoolError);
}

TEST(Reflate, ScaleEquivariance) {
  const auto [d, t] = generate_dataset(*preset("set2-unbalanced"), 7);
  const double c = 3.5;
  const FitResult a = fit(d, Criterion::REML);
  const FitResult b = fit(d.with_responses(c * d.y()), Criterion::REML);
  const auto pa = preb1_pools(a, d), pb = preb1_pools(b, d);
  EXPECT_LT((pb.u_pool - c * pa.u_pool).cwiseAbs().maxCoeff(), 1e-8);
  for (std::size_t i = 0; i < d.num_clusters(); ++i)
    EXPECT_LT((pb.e_pools[i] - c * pa.e_pools[i]).cwiseAbs().maxCoeff(), 1e-8);
}

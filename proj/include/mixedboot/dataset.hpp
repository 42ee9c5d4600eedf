#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mixedboot/errors.hpp"

namespace mixedboot {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Criterion { ML, REML };

inline const char* to_string(Criterion c) { return c == Criterion::ML ? "ML" : "REML"; }

// Responses, covariates and cluster membership of N units in D clusters.
//
// Rows are stored stacked cluster by cluster; cluster i occupies rows
// [offset(i), offset(i) + size(i)). The random-effect design Z is the
// block-of-ones matrix implied by the sizes and is never materialized.
// The first design column is expected to be the intercept.
class ClusteredDataset {
 public:
  ClusteredDataset() = default;

  ClusteredDataset(std::vector<int> cluster_sizes, VectorXd y, MatrixXd X)
      : sizes_(std::move(cluster_sizes)), y_(std::move(y)), X_(std::move(X)) {
    if (sizes_.size() < 2) throw InvalidArgument("dataset needs at least two clusters");
    offsets_.resize(sizes_.size() + 1, 0);
    for (std::size_t i = 0; i < sizes_.size(); ++i) {
      if (sizes_[i] < 1) throw InvalidArgument("cluster " + std::to_string(i) + " is empty");
      offsets_[i + 1] = offsets_[i] + static_cast<std::size_t>(sizes_[i]);
    }
    if (static_cast<std::size_t>(y_.size()) != offsets_.back())
      throw InvalidArgument("response length does not match the sum of cluster sizes");
    if (static_cast<std::size_t>(X_.rows()) != offsets_.back())
      throw InvalidArgument("design rows do not match the sum of cluster sizes");
    if (X_.cols() < 1) throw InvalidArgument("design needs at least the intercept column");
    if (!y_.allFinite() || !X_.allFinite()) throw InvalidArgument("non-finite value in dataset");
  }

  // Builds from per-cluster blocks.
  static ClusteredDataset from_clusters(const std::vector<VectorXd>& ys,
                                        const std::vector<MatrixXd>& Xs) {
    if (ys.size() != Xs.size()) throw InvalidArgument("response/design cluster count mismatch");
    if (ys.empty()) throw InvalidArgument("dataset needs at least two clusters");
    const Eigen::Index p = Xs.front().cols();
    std::vector<int> sizes;
    Eigen::Index n = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      if (Xs[i].cols() != p) throw InvalidArgument("covariate width differs across clusters");
      if (Xs[i].rows() != ys[i].size()) throw InvalidArgument("cluster block row mismatch");
      sizes.push_back(static_cast<int>(ys[i].size()));
      n += ys[i].size();
    }
    VectorXd y(n);
    MatrixXd X(n, p);
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      y.segment(row, ys[i].size()) = ys[i];
      X.middleRows(row, ys[i].size()) = Xs[i];
      row += ys[i].size();
    }
    return ClusteredDataset(std::move(sizes), std::move(y), std::move(X));
  }

  std::size_t num_clusters() const noexcept { return sizes_.size(); }
  std::size_t num_units() const noexcept { return offsets_.empty() ? 0 : offsets_.back(); }
  Eigen::Index num_covariates() const noexcept { return X_.cols(); }
  int size(std::size_t i) const { return sizes_[i]; }
  std::size_t offset(std::size_t i) const { return offsets_[i]; }
  const std::vector<int>& cluster_sizes() const noexcept { return sizes_; }

  const VectorXd& y() const noexcept { return y_; }
  const MatrixXd& X() const noexcept { return X_; }

  auto response(std::size_t i) const { return y_.segment(offsets_[i], sizes_[i]); }
  auto design(std::size_t i) const { return X_.middleRows(offsets_[i], sizes_[i]); }

  bool balanced() const noexcept {
    for (int n : sizes_)
      if (n != sizes_.front()) return false;
    return true;
  }

  // Same clusters and design, new responses.
  ClusteredDataset with_responses(VectorXd y_new) const {
    return ClusteredDataset(sizes_, std::move(y_new), X_);
  }

  // Stacks clusters picks[0], picks[1], ... (repeats allowed).
  ClusteredDataset select_clusters(std::span<const std::size_t> picks) const {
    std::vector<int> sizes;
    sizes.reserve(picks.size());
    Eigen::Index n = 0;
    for (std::size_t h : picks) {
      sizes.push_back(sizes_.at(h));
      n += sizes_[h];
    }
    VectorXd y(n);
    MatrixXd X(n, X_.cols());
    Eigen::Index row = 0;
    for (std::size_t h : picks) {
      y.segment(row, sizes_[h]) = response(h);
      X.middleRows(row, sizes_[h]) = design(h);
      row += sizes_[h];
    }
    return ClusteredDataset(std::move(sizes), std::move(y), std::move(X));
  }

  bool operator==(const ClusteredDataset& o) const {
    return sizes_ == o.sizes_ && y_ == o.y_ && X_.rows() == o.X_.rows() &&
           X_.cols() == o.X_.cols() && X_ == o.X_;
  }

 private:
  std::vector<int> sizes_;
  std::vector<std::size_t> offsets_;
  VectorXd y_;
  MatrixXd X_;
};

// theta = (beta, sigma2_u, sigma2_e).
struct ThetaVector {
  VectorXd beta;
  double sigma2_u = 0.0;
  double sigma2_e = 1.0;

  Eigen::Index p() const noexcept { return beta.size(); }
  double lambda() const { return sigma2_u / sigma2_e; }

  // Packed as (beta..., sigma2_u, sigma2_e).
  VectorXd packed() const {
    VectorXd v(beta.size() + 2);
    v << beta, sigma2_u, sigma2_e;
    return v;
  }

  static ThetaVector unpack(const Eigen::Ref<const VectorXd>& v) {
    ThetaVector t;
    const Eigen::Index p = v.size() - 2;
    t.beta = v.head(p);
    t.sigma2_u = v(p);
    t.sigma2_e = v(p + 1);
    return t;
  }

  void validate() const {
    if (!(sigma2_u >= 0.0)) throw InvalidArgument("sigma2_u must be nonnegative");
    if (!(sigma2_e > 0.0)) throw InvalidArgument("sigma2_e must be positive");
  }
};

// Names of the packed theta components: beta0..beta{p-1}, sigma2_u, sigma2_e.
inline std::vector<std::string> theta_names(Eigen::Index p) {
  std::vector<std::string> names;
  for (Eigen::Index k = 0; k < p; ++k) names.push_back("beta" + std::to_string(k));
  names.emplace_back("sigma2_u");
  names.emplace_back("sigma2_e");
  return names;
}

}  // namespace mixedboot

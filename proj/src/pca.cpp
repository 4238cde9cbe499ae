#include <Eigen/Dense>
#include <cmath>

#include "beamsense/error.hpp"
#include "beamsense/features.hpp"

namespace beamsense {

Pca2Result pca2(const std::vector<std::vector<double>>& rows) {
  BEAMSENSE_REQUIRE(rows.size() >= 3, "pca2 needs at least 3 rows");
  const std::size_t d = rows.front().size();
  BEAMSENSE_REQUIRE(d >= 2, "pca2 needs at least 2 columns");
  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < n; ++i) {
    BEAMSENSE_REQUIRE(rows[i].size() == d, "pca2 rows have unequal length");
    for (std::size_t j = 0; j < d; ++j) {
      BEAMSENSE_REQUIRE(std::isfinite(rows[i][j]), "pca2 input is not finite");
      X(i, static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  Pca2Result out;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double m = X.col(j).mean();
    X.col(j).array() -= m;
    const double sd = std::sqrt(X.col(j).squaredNorm() / static_cast<double>(n));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(m))))
      throw ConstantColumnError("pca2: column " + std::to_string(j) + " has zero variance");
    X.col(j) /= sd;
    out.column_mean.push_back(m);
    out.column_std.push_back(sd);
  }
  // Population covariance of standardized data (the correlation matrix).
  const Eigen::MatrixXd C = (X.transpose() * X) / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  BEAMSENSE_REQUIRE(es.info() == Eigen::Success, "pca2 eigendecomposition failed");
  const Eigen::Index top = C.cols() - 1;  // eigenvalues ascend
  Eigen::MatrixXd V(C.cols(), 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd v = es.eigenvectors().col(top - c);
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      if (std::abs(v(j)) > 1e-12) {
        if (v(j) < 0) v = -v;
        break;
      }
    }
    V.col(c) = v;
    out.explained_variance[c] = std::max(0.0, es.eigenvalues()(top - c));
    out.explained_ratio[c] = out.explained_variance[c] / static_cast<double>(d);
  }
  const Eigen::MatrixXd P = X * V;
  out.projection.resize(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) out.projection[i] = {P(i, 0), P(i, 1)};
  out.components.resize(d);
  for (std::size_t j = 0; j < d; ++j) out.components[j] = {V(static_cast<Eigen::Index>(j), 0), V(static_cast<Eigen::Index>(j), 1)};
  return out;
}

}  // namespace beamsense

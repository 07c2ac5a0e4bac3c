#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace fol {

// Canonical exponential families with unit dispersion and no implicit intercept.
enum class Family { Gaussian, Logistic };

// One raw batch of observations for a single source. Rows are observations;
// batches are immutable once constructed.
struct Batch {
  int source_id = 0;
  int batch_index = 0;  // 1-based position in the stream
  Eigen::MatrixXd X;
  Eigen::VectorXd y;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }
};

// Cumulant d(theta). Logistic uses the overflow-safe form
// max(theta, 0) + log1p(exp(-|theta|)).
template <typename Scalar>
Scalar cumulant(Family fam, Scalar theta) {
  if (fam == Family::Gaussian) return theta * theta / Scalar(2);
  return std::max(theta, Scalar(0)) + std::log1p(std::exp(-std::abs(theta)));
}

// Mean function d'(theta). Logistic branches on the sign of theta so the
// exponential never overflows.
template <typename Scalar>
Scalar mean_fn(Family fam, Scalar theta) {
  if (fam == Family::Gaussian) return theta;
  if (theta >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-theta));
  const Scalar e = std::exp(theta);
  return e / (Scalar(1) + e);
}

// Variance function d''(theta) >= 0. The logistic mean is clamped away from
// {0,1} so downstream divisions stay finite.
template <typename Scalar>
Scalar variance_fn(Family fam, Scalar theta) {
  if (fam == Family::Gaussian) return Scalar(1);
  const Scalar lo = Scalar(1e-12);
  const Scalar mu = std::clamp(mean_fn(fam, theta), lo, Scalar(1) - lo);
  return mu * (Scalar(1) - mu);
}

// Log-likelihood sum_i [y_i x_i'beta - d(x_i'beta)] up to the additive term
// that does not depend on beta. Throws std::invalid_argument on dimension
// mismatch and std::domain_error when any linear predictor is non-finite.
double log_likelihood(Family fam, const Eigen::Ref<const Eigen::VectorXd>& beta,
                      const Batch& batch);

// Score U(beta) = X'(y - mu(X beta)).
Eigen::VectorXd score(Family fam, const Eigen::Ref<const Eigen::VectorXd>& beta,
                      const Batch& batch);

// Hessian J(beta) = -X' diag(d''(X beta)) X; symmetric negative semidefinite.
Eigen::MatrixXd hessian(Family fam, const Eigen::Ref<const Eigen::VectorXd>& beta,
                        const Batch& batch);

}  // namespace fol

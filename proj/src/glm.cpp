#include "fol/glm.hpp"

#include <stdexcept>
#include <string>

namespace fol {

namespace {

Eigen::VectorXd linear_predictor(const Eigen::Ref<const Eigen::VectorXd>& beta,
                                 const Batch& batch) {
  if (batch.X.rows() != batch.y.size())
    throw std::invalid_argument("batch X has " + std::to_string(batch.X.rows()) +
                                " rows but y has " + std::to_string(batch.y.size()));
  if (batch.X.cols() != beta.size())
    throw std::invalid_argument("beta has length " + std::to_string(beta.size()) +
                                " but batch has " + std::to_string(batch.X.cols()) +
                                " covariates");
  Eigen::VectorXd theta = batch.X * beta;
  if (!theta.allFinite())
    throw std::domain_error("non-finite linear predictor");
  return theta;
}

}  // namespace

double log_likelihood(Family fam, const Eigen::Ref<const Eigen::VectorXd>& beta,
                      const Batch& batch) {
  const Eigen::VectorXd theta = linear_predictor(beta, batch);
  double ll = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    ll += batch.y[i] * theta[i] - cumulant(fam, theta[i]);
  return ll;
}

Eigen::VectorXd score(Family fam, const Eigen::Ref<const Eigen::VectorXd>& beta,
                      const Batch& batch) {
  const Eigen::VectorXd theta = linear_predictor(beta, batch);
  Eigen::VectorXd resid(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    resid[i] = batch.y[i] - mean_fn(fam, theta[i]);
  return batch.X.transpose() * resid;
}

Eigen::MatrixXd hessian(Family fam, const Eigen::Ref<const Eigen::VectorXd>& beta,
                        const Batch& batch) {
  const Eigen::VectorXd theta = linear_predictor(beta, batch);
  if (fam == Family::Gaussian)
    return -(batch.X.transpose() * batch.X);
  Eigen::VectorXd w(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i)
    w[i] = variance_fn(fam, theta[i]);
  return -(batch.X.transpose() * w.asDiagonal() * batch.X);
}

}  // namespace fol

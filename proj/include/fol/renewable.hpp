#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "fol/glm.hpp"

namespace fol {

// Everything one source keeps between batches: the previous estimate and the
// accumulated Hessian sum_{u<=b} J(beta_hat_u; D_u). Raw batches can be
// discarded once absorbed; estimation never needs them again.
struct SourceState {
  int source_id = 0;
  Eigen::VectorXd beta_prev;
  Eigen::MatrixXd J_acc;  // negative semidefinite, p x p
  std::uint64_t n_cum = 0;
  int batches_seen = 0;

  static SourceState fresh(int source_id, Eigen::Index p);
  Eigen::Index p() const { return beta_prev.size(); }
};

// Incremental surrogate for the cumulative log-likelihood:
//   (1/2)(beta - beta_prev)' J_acc (beta - beta_prev) + loglik(beta; batch).
// Exact (up to a constant) for the Gaussian family; second-order accurate
// otherwise. A fresh state reduces to the plain batch log-likelihood.
double approx_loglik(const SourceState& state, Family fam,
                     const Eigen::Ref<const Eigen::VectorXd>& beta,
                     const Batch& batch);

// Gradient of the surrogate: U(beta; batch) + J_acc (beta - beta_prev).
Eigen::VectorXd surrogate_score(const SourceState& state, Family fam,
                                const Eigen::Ref<const Eigen::VectorXd>& beta,
                                const Batch& batch);

// Normalized descent direction -(1/n_total)[U + J_acc (beta - beta_prev)],
// where n_total is the cumulative sample size over all sources.
Eigen::VectorXd approx_gradient(const SourceState& state, Family fam,
                                const Eigen::Ref<const Eigen::VectorXd>& beta,
                                const Batch& batch, double n_total);

// Folds a finished batch into the state at the batch estimate beta_hat.
void absorb_batch(SourceState& state, Family fam,
                  const Eigen::Ref<const Eigen::VectorXd>& beta_hat,
                  const Batch& batch);

// Binary checkpoint, little-endian throughout:
//   magic "FOLS" | u32 format version | u32 source_id | u32 p
//   | u32 batches_seen | u64 n_cum | p doubles beta_prev
//   | p(p+1)/2 doubles upper triangle of J_acc (row-major).
std::vector<std::uint8_t> state_to_bytes(const SourceState& state);
SourceState state_from_bytes(const std::vector<std::uint8_t>& bytes);
void save_state(const SourceState& state, const std::string& path);
SourceState load_state(const std::string& path);

}  // namespace fol

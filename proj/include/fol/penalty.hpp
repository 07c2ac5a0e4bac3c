#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "fol/errors.hpp"

namespace fol {

// Minimax concave penalty (MCP) with concavity parameter a and the pairwise
// fusion/ADMM knobs used by prox_operator. a * admm_rho > 1 keeps every ADMM
// subproblem strictly convex.
struct PenaltyConfig {
  double lambda1 = 0.0;  // entrywise sparsity level
  double lambda2 = 0.0;  // pairwise fusion level
  double a = 3.0;
  double admm_rho = 1.0;
  int max_admm_iters = 500;
  double tol_primal = 1e-5;
  double tol_dual = 1e-5;

  void validate() const;
};

// MCP value: lambda|x| - x^2/(2a) inside |x| <= a*lambda, constant a*lambda^2/2
// beyond. Continuously differentiable except at 0.
template <typename Scalar>
Scalar mcp_value(Scalar x, Scalar lambda, Scalar a) {
  const Scalar ax = std::abs(x);
  if (ax <= a * lambda) return lambda * ax - ax * ax / (2 * a);
  return a * lambda * lambda / 2;
}

// argmin_x (rho/2)(x - z)^2 + mcp_value(x, lambda, a). Requires a*rho > 1
// (strict convexity); returns z untouched beyond |z| > a*lambda.
template <typename Scalar>
Scalar scalar_mcp_prox(Scalar z, Scalar lambda, Scalar a, Scalar rho) {
  if (a * rho <= Scalar(1))
    throw ConfigError("scalar_mcp_prox requires a*rho > 1");
  const Scalar az = std::abs(z);
  if (az > a * lambda) return z;
  const Scalar shrunk = az - lambda / rho;
  if (shrunk <= Scalar(0)) return Scalar(0);
  const Scalar x = shrunk / (Scalar(1) - Scalar(1) / (a * rho));
  return z < Scalar(0) ? -x : x;
}

// Grouped analogue on the Euclidean norm of z; output stays collinear with z.
Eigen::VectorXd group_mcp_prox(const Eigen::Ref<const Eigen::VectorXd>& z,
                               double lambda, double a, double rho);

// Scaled-dual ADMM state for the K(K-1)/2 ordered pairs (k1 < k2), kept so a
// caller can warm-start consecutive prox calls. Column order is lexicographic:
// (0,1), (0,2), ..., (0,K-1), (1,2), ...
struct FusionState {
  int K = 0;
  Eigen::MatrixXd delta;  // p x K(K-1)/2, difference surrogates
  Eigen::MatrixXd dual;   // p x K(K-1)/2, scaled multipliers

  bool empty() const { return K == 0; }
};

inline int pair_count(int K) { return K * (K - 1) / 2; }

inline int pair_index(int k1, int k2, int K) {
  return k1 * (2 * K - k1 - 1) / 2 + (k2 - k1 - 1);
}

struct ProxResult {
  Eigen::MatrixXd B;
  FusionState fusion;
  bool converged = true;
  int iters = 0;
};

// argmin_B (1/2)||B - B_bar||_F^2 + sum_{k,j} mcp(|B_jk|, lambda1)
//        + sum_{k1<k2} mcp(||B_k1 - B_k2||_2, lambda2)
// via ADMM on delta_{k1k2} = B_k1 - B_k2. The B-update solves each column's
// subproblem exactly (simultaneous Jacobi sweep), so permuting the columns of
// B_bar permutes the output identically. Non-convergence within
// max_admm_iters returns the last iterate with converged = false.
ProxResult prox_operator(const Eigen::Ref<const Eigen::MatrixXd>& B_bar,
                         const PenaltyConfig& cfg,
                         const FusionState* warm = nullptr);

// Penalty part of the objective: entrywise MCP plus pairwise fusion MCP.
double penalty_value(const Eigen::Ref<const Eigen::MatrixXd>& B, double lambda1,
                     double lambda2, double a);

// Full prox objective; used by tests and descent checks.
double prox_objective(const Eigen::Ref<const Eigen::MatrixXd>& B,
                      const Eigen::Ref<const Eigen::MatrixXd>& B_bar,
                      const PenaltyConfig& cfg);

// Estimated subgroup structure. groups are listed by smallest member id;
// labels[k] is the group index of source k.
struct Partition {
  std::vector<std::vector<int>> groups;
  std::vector<int> labels;

  int G() const { return static_cast<int>(groups.size()); }
};

// Connected components of the "fused" graph: sources k1, k2 are joined when
// ||delta_{k1k2}||_2 <= merge_tol. Union-find closure keeps the result
// transitive even when the direct delta of an implied pair is nonzero.
Partition extract_partition(const FusionState& fusion,
                            const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                            double merge_tol = 0.0);

// Replaces every member column with the weight-averaged column of its group,
// making fused columns exactly equal. weights is one nonnegative entry per
// source (cumulative sample sizes in the solver).
Eigen::MatrixXd group_average(const Eigen::Ref<const Eigen::MatrixXd>& B,
                              const Partition& partition,
                              const Eigen::Ref<const Eigen::VectorXd>& weights);

}  // namespace fol

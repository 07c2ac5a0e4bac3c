#pragma once

#include <Eigen/Dense>
#include <vector>

#include "fol/glm.hpp"
#include "fol/penalty.hpp"

namespace fol {

// Support recovery averaged over sources. A source with no true nonzeros
// contributes 1 to the TPR average; one with no true zeros contributes 0 to
// the FPR average (nothing can be missed or falsely added).
double true_positive_rate(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                          const Eigen::Ref<const Eigen::MatrixXd>& B_true);
double false_positive_rate(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                           const Eigen::Ref<const Eigen::MatrixXd>& B_true);

// (1/K) sum_k ||bhat_k - btrue_k||_2^2
double sum_squared_error(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                         const Eigen::Ref<const Eigen::MatrixXd>& B_true);

// Mean squared prediction error over held-out rows, averaged over sources.
double mean_squared_error(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                          const std::vector<Batch>& test_sets);

// Rank-based AUC (ties get averaged ranks), averaged over sources. A source
// whose test labels are single-class has no AUC and is skipped; the result is
// NaN when every source is skipped.
double area_under_curve(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                        const std::vector<Batch>& test_sets);

// Chance-corrected agreement between two labelings of the same items;
// 1 on identical partitions, near 0 for independent ones.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

struct EvalSummary {
  double tpr = 0.0;
  double fpr = 0.0;
  double sse = 0.0;
  double predictive = 0.0;  // MSE for gaussian, AUC for logistic
  double ari = 0.0;
  int G_hat = 0;
};

EvalSummary evaluate(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                     const Partition& partition,
                     const Eigen::Ref<const Eigen::MatrixXd>& B_true,
                     const std::vector<int>& true_labels, Family fam,
                     const std::vector<Batch>& test_sets);

}  // namespace fol

#include "fol/penalty.hpp"

#include <algorithm>
#include <numeric>

namespace fol {

void PenaltyConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0)
    throw ConfigError("penalty levels must be nonnegative");
  if (!(a > 0) || !(admm_rho > 0))
    throw ConfigError("a and admm_rho must be positive");
  if (a * admm_rho <= 1.0)
    throw ConfigError("need a * admm_rho > 1 for convex ADMM subproblems");
  if (max_admm_iters < 1)
    throw ConfigError("max_admm_iters must be at least 1");
  if (!(tol_primal > 0) || !(tol_dual > 0))
    throw ConfigError("ADMM tolerances must be positive");
}

Eigen::VectorXd group_mcp_prox(const Eigen::Ref<const Eigen::VectorXd>& z,
                               double lambda, double a, double rho) {
  if (a * rho <= 1.0)
    throw ConfigError("group_mcp_prox requires a*rho > 1");
  const double r = z.norm();
  if (r == 0.0) return Eigen::VectorXd::Zero(z.size());
  if (r > a * lambda) return z;
  const double scale = std::max(0.0, 1.0 - lambda / (rho * r)) / (1.0 - 1.0 / (a * rho));
  return scale * z;
}

namespace {

// Union-find with path compression; components of the fused-pair graph.
struct UnionFind {
  std::vector<int> parent;

  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }

  int root(int i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }

  void join(int i, int j) {
    const int ri = root(i), rj = root(j);
    if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
  }
};

}  // namespace

double penalty_value(const Eigen::Ref<const Eigen::MatrixXd>& B, double lambda1,
                     double lambda2, double a) {
  double v = 0.0;
  for (Eigen::Index k = 0; k < B.cols(); ++k)
    for (Eigen::Index j = 0; j < B.rows(); ++j)
      v += mcp_value(B(j, k), lambda1, a);
  for (Eigen::Index k1 = 0; k1 + 1 < B.cols(); ++k1)
    for (Eigen::Index k2 = k1 + 1; k2 < B.cols(); ++k2)
      v += mcp_value((B.col(k1) - B.col(k2)).norm(), lambda2, a);
  return v;
}

double prox_objective(const Eigen::Ref<const Eigen::MatrixXd>& B,
                      const Eigen::Ref<const Eigen::MatrixXd>& B_bar,
                      const PenaltyConfig& cfg) {
  return 0.5 * (B - B_bar).squaredNorm() +
         penalty_value(B, cfg.lambda1, cfg.lambda2, cfg.a);
}

ProxResult prox_operator(const Eigen::Ref<const Eigen::MatrixXd>& B_bar,
                         const PenaltyConfig& cfg, const FusionState* warm) {
  cfg.validate();
  const int p = static_cast<int>(B_bar.rows());
  const int K = static_cast<int>(B_bar.cols());

  ProxResult out;
  if (K == 1) {
    // No pairs: the problem is a coordinatewise scalar prox at unit curvature.
    out.B = B_bar.unaryExpr(
        [&](double z) { return scalar_mcp_prox(z, cfg.lambda1, cfg.a, 1.0); });
    out.fusion.K = 1;
    out.fusion.delta.resize(p, 0);
    out.fusion.dual.resize(p, 0);
    return out;
  }

  const int P = pair_count(K);
  const double vartheta = cfg.admm_rho;

  FusionState st;
  st.K = K;
  if (warm != nullptr && warm->K == K && warm->delta.rows() == p) {
    st = *warm;
  } else {
    st.delta.resize(p, P);
    st.dual = Eigen::MatrixXd::Zero(p, P);
    for (int k1 = 0; k1 < K; ++k1)
      for (int k2 = k1 + 1; k2 < K; ++k2)
        st.delta.col(pair_index(k1, k2, K)) = B_bar.col(k1) - B_bar.col(k2);
  }

  Eigen::MatrixXd B = B_bar;
  Eigen::MatrixXd B_old(p, K), Z(p, K);
  // Column curvature of the per-column subproblem: fidelity, one coupling term
  // per partner column, and a proximal damping term tau*||beta - beta_old||^2/2.
  // Without damping the simultaneous column solves cycle (each column jumps to
  // its partners' positions); tau = vartheta*(K-1) suppresses that overshoot
  // and leaves the fixed points untouched.
  const double tau = vartheta * (K - 1);
  const double r = 1.0 + vartheta * (K - 1) + tau;

  bool converged = false;
  int it = 0;
  for (; it < cfg.max_admm_iters; ++it) {
    // B-update: simultaneous damped column solves given the other columns.
    B_old = B;
    Z = B_bar + tau * B_old;
    for (int k1 = 0; k1 < K; ++k1) {
      for (int k2 = k1 + 1; k2 < K; ++k2) {
        const int q = pair_index(k1, k2, K);
        Z.col(k1) += vartheta * (B_old.col(k2) + st.delta.col(q) - st.dual.col(q));
        Z.col(k2) += vartheta * (B_old.col(k1) - st.delta.col(q) + st.dual.col(q));
      }
    }
    for (int k = 0; k < K; ++k)
      for (int j = 0; j < p; ++j)
        B(j, k) = scalar_mcp_prox(Z(j, k) / r, cfg.lambda1, cfg.a, r);

    // The damping term hides residual drift from the pair residuals: a fused
    // group's delta sits exactly at zero while the group's common vector is
    // still moving, so the B-step movement must count as dual residual too.
    double primal = 0.0, dual_res = 0.0;
    for (int k = 0; k < K; ++k)
      dual_res = std::max(dual_res, tau * (B.col(k) - B_old.col(k)).norm());

    // delta-update (grouped prox) and scaled dual ascent per pair.
    for (int k1 = 0; k1 < K; ++k1) {
      for (int k2 = k1 + 1; k2 < K; ++k2) {
        const int q = pair_index(k1, k2, K);
        const Eigen::VectorXd diff = B.col(k1) - B.col(k2);
        const Eigen::VectorXd delta_new =
            group_mcp_prox(diff + st.dual.col(q), cfg.lambda2, cfg.a, vartheta);
        dual_res = std::max(dual_res, vartheta * (delta_new - st.delta.col(q)).norm());
        st.delta.col(q) = delta_new;
        st.dual.col(q) += diff - delta_new;
        primal = std::max(primal, (diff - delta_new).norm());
      }
    }

    if (primal <= cfg.tol_primal && dual_res <= cfg.tol_dual) {
      converged = true;
      ++it;
      break;
    }
  }

  out.B = std::move(B);
  out.fusion = std::move(st);
  out.converged = converged;
  out.iters = it;
  return out;
}

Partition extract_partition(const FusionState& fusion,
                            const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                            double merge_tol) {
  const int K = static_cast<int>(B_hat.cols());
  UnionFind uf(K);
  if (!fusion.empty() && fusion.K == K) {
    for (int k1 = 0; k1 < K; ++k1)
      for (int k2 = k1 + 1; k2 < K; ++k2)
        if (fusion.delta.col(pair_index(k1, k2, K)).norm() <= merge_tol)
          uf.join(k1, k2);
  }

  Partition part;
  part.labels.assign(K, -1);
  for (int k = 0; k < K; ++k) {
    const int r = uf.root(k);
    if (part.labels[r] < 0) {
      part.labels[r] = static_cast<int>(part.groups.size());
      part.groups.emplace_back();
    }
    part.labels[k] = part.labels[r];
    part.groups[part.labels[k]].push_back(k);
  }
  return part;
}

Eigen::MatrixXd group_average(const Eigen::Ref<const Eigen::MatrixXd>& B,
                              const Partition& partition,
                              const Eigen::Ref<const Eigen::VectorXd>& weights) {
  Eigen::MatrixXd out = B;
  for (const auto& g : partition.groups) {
    if (g.size() < 2) continue;
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(B.rows());
    double wsum = 0.0;
    for (int k : g) {
      avg += weights[k] * B.col(k);
      wsum += weights[k];
    }
    avg /= wsum;
    for (int k : g) out.col(k) = avg;
  }
  return out;
}

}  // namespace fol

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "fol/glm.hpp"
#include "fol/penalty.hpp"
#include "fol/renewable.hpp"

namespace fol {

// Solver settings on top of the penalty knobs. learning_rate empty means the
// curvature-based automatic step; a positive value fixes the step,
// and a blow-up under a fixed step is a hard error rather than a retry.
struct FolConfig {
  PenaltyConfig penalty;
  std::vector<double> lambda1_grid;  // empty: scaled defaults (see below)
  std::vector<double> lambda2_grid;
  std::optional<double> learning_rate;
  int max_outer_iters = 200;
  double tol_outer = 1e-5;
  double merge_tol = 0.0;
};

struct FitResult {
  Eigen::MatrixXd B_hat;  // p x K, fused columns exactly equal
  Partition partition;
  std::vector<std::vector<int>> selected;  // nonzero coordinates per source
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double omega = 0.0;
  double objective = 0.0;
  double mbic = 0.0;
  int outer_iters = 0;
  bool converged = true;
  std::vector<double> objective_trace;  // objective at each accepted iterate
};

// Canonical little-endian encoding; equal results have equal bytes.
std::vector<std::uint8_t> fit_to_bytes(const FitResult& fit);
FitResult fit_from_bytes(const std::vector<std::uint8_t>& bytes);

// ---------------------------------------------------------------------------
// Round plumbing. One source's reply to a broadcast carries summary
// quantities only: its post-step vector, the surrogate log-likelihood at the
// broadcast point, a curvature bound, and its cumulative sample count. Raw
// rows never cross this boundary.
// ---------------------------------------------------------------------------

struct LocalReply {
  Eigen::VectorXd beta_bar;
  double loss = 0.0;
  double lipschitz = 0.0;
  std::uint64_t n_total = 0;
};

// Client-side compute for one source and its current batch. beta_bar applies
// beta + step * [U(beta) + J_acc (beta - beta_prev)], where step is the
// learning rate divided by the total cumulative sample size (so the client
// never needs the global count). The curvature bound is the largest
// eigenvalue of -(J_acc + J(beta; batch)), evaluated once per batch at the
// first broadcast point.
class LocalSource {
 public:
  LocalSource(const SourceState* state, const Batch* batch, Family fam);

  void batch_start(double step) { step_ = step; }
  LocalReply on_broadcast(const Eigen::Ref<const Eigen::VectorXd>& beta);

 private:
  const SourceState* state_;
  const Batch* batch_;
  Family fam_;
  double step_ = 0.0;
  double lipschitz_ = -1.0;
};

// Coordinator's view of one communication round, independent of transport.
// broadcast must return replies ordered by source id.
class RoundBackend {
 public:
  virtual ~RoundBackend() = default;
  virtual int K() const = 0;
  virtual void batch_start(int batch_index, double lambda1, double lambda2,
                           double step) = 0;
  virtual std::vector<LocalReply> broadcast(int round,
                                            const Eigen::Ref<const Eigen::MatrixXd>& B) = 0;
};

// Direct-call backend: the coordinator and all sources share one process.
class InProcessBackend : public RoundBackend {
 public:
  InProcessBackend(const std::vector<SourceState>& states,
                   const std::vector<Batch>& batches, Family fam);

  int K() const override { return static_cast<int>(sources_.size()); }
  void batch_start(int batch_index, double lambda1, double lambda2,
                   double step) override;
  std::vector<LocalReply> broadcast(int round,
                                    const Eigen::Ref<const Eigen::MatrixXd>& B) override;

 private:
  std::vector<LocalSource> sources_;
};

// Totals gathered from a zero-step probe round at the initial iterate.
struct ProbeInfo {
  double n_total = 0.0;   // cumulative samples across all sources
  double l_max = 0.0;     // max per-source curvature bound
  Eigen::VectorXd n_totals;  // per-source cumulative samples
};

ProbeInfo probe_round(RoundBackend& backend, int batch_index,
                      const Eigen::Ref<const Eigen::MatrixXd>& B_init);

// Full per-batch fit at fixed penalty levels, plus the raw iterate and fusion
// state a tuner needs for warm starts.
struct FitOutput {
  FitResult result;
  Eigen::MatrixXd B_iterate;  // converged iterate before group averaging
  FusionState fusion;
};

FitOutput fit_rounds(RoundBackend& backend, const FolConfig& cfg, double lambda1,
                     double lambda2, int batch_index,
                     const Eigen::Ref<const Eigen::MatrixXd>& B_init,
                     const ProbeInfo& probe, const FusionState* warm_fusion);

// Grid search over (lambda2 outer descending, lambda1 inner). Each lambda2
// row sweeps lambda1 down and then back up with one coefficient warm chain
// threaded through both legs; the chain resets at every row and fusion duals
// always start cold (see tune_rounds for why). Picks the minimum-mBIC fit,
// ties broken toward the lexicographically larger (lambda1, lambda2).
FitOutput tune_rounds(RoundBackend& backend, const FolConfig& cfg, int batch_index,
                      const Eigen::Ref<const Eigen::MatrixXd>& B_init);

// Scaled default grids: 10 log-spaced multipliers in [0.01, 0.5] applied to
// sqrt(log(pK)/N) for lambda1 and sqrt(ceil(log(pK))/N) for lambda2.
std::pair<std::vector<double>, std::vector<double>> default_lambda_grids(int p, int K,
                                                                         double n_total);

// ---------------------------------------------------------------------------
// Public single-process entry points.
// ---------------------------------------------------------------------------

// One batch update at the penalty levels in cfg.penalty. States are not
// modified; callers absorb the returned columns when they accept the fit.
FitResult fit_batch(const std::vector<SourceState>& states,
                    const std::vector<Batch>& batches, Family fam,
                    const FolConfig& cfg);

// Grid-tuned batch update (mBIC model choice).
FitResult tune(const std::vector<SourceState>& states,
               const std::vector<Batch>& batches, Family fam, const FolConfig& cfg);

// Objective at B: -(1/N) sum_k surrogate loglik + penalties.
double objective_value(const std::vector<SourceState>& states,
                       const std::vector<Batch>& batches, Family fam,
                       const Eigen::Ref<const Eigen::MatrixXd>& B,
                       const FolConfig& cfg);

// Sources fit independently: lambda2 = 0 and a per-source mBIC choice of
// lambda1. Partition is K singletons.
FitResult fit_ind(const std::vector<SourceState>& states,
                  const std::vector<Batch>& batches, Family fam,
                  const FolConfig& cfg);

// One shared vector: per-source fits as in fit_ind, then an information-
// weighted average (ridge jitter 1e-8; sample-size weights if singular)
// broadcast to every source.
FitResult fit_homo(const std::vector<SourceState>& states,
                   const std::vector<Batch>& batches, Family fam,
                   const FolConfig& cfg);

// Concatenates each source's raw batches into one pooled batch per source.
std::vector<Batch> pool_sources(const std::vector<std::vector<Batch>>& by_source);

// Offline reference: fit_batch on pooled raw data with fresh states, so the
// surrogate is the exact cumulative log-likelihood.
FitResult fit_oracle(const std::vector<std::vector<Batch>>& by_source, Family fam,
                     const FolConfig& cfg);

// As fit_oracle but with the mBIC grid search, for method comparisons.
FitResult tune_oracle(const std::vector<std::vector<Batch>>& by_source, Family fam,
                      const FolConfig& cfg);

}  // namespace fol

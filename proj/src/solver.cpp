#include "fol/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "fol/errors.hpp"
#include "fol/wire.hpp"

namespace fol {

namespace {

constexpr char kFitMagic[4] = {'F', 'O', 'L', 'R'};
constexpr std::uint32_t kFitVersion = 1;

void check_aligned(const std::vector<SourceState>& states,
                   const std::vector<Batch>& batches) {
  if (states.empty() || states.size() != batches.size())
    throw std::invalid_argument("need exactly one state per source batch");
  const Eigen::Index p = states[0].p();
  const int seen = states[0].batches_seen;
  for (std::size_t k = 0; k < states.size(); ++k) {
    if (states[k].p() != p)
      throw std::invalid_argument("source state dimensions differ");
    if (states[k].batches_seen != seen)
      throw std::invalid_argument("sources are at different batch counts");
    if (batches[k].n() == 0)
      throw DataError("empty batch for source " + std::to_string(batches[k].source_id));
    if (batches[k].p() != p)
      throw std::invalid_argument("batch width does not match state dimension");
  }
}

void check_config(const FolConfig& cfg) {
  cfg.penalty.validate();
  if (cfg.max_outer_iters < 1) throw ConfigError("max_outer_iters must be >= 1");
  if (!(cfg.tol_outer > 0.0)) throw ConfigError("tol_outer must be > 0");
  if (!(cfg.merge_tol >= 0.0)) throw ConfigError("merge_tol must be >= 0");
  if (cfg.learning_rate &&
      !(std::isfinite(*cfg.learning_rate) && *cfg.learning_rate > 0.0))
    throw ConfigError("learning_rate must be positive and finite");
  for (double v : cfg.lambda1_grid)
    if (!(std::isfinite(v) && v >= 0.0)) throw ConfigError("lambda1 grid entries must be >= 0");
  for (double v : cfg.lambda2_grid)
    if (!(std::isfinite(v) && v >= 0.0)) throw ConfigError("lambda2 grid entries must be >= 0");
}

// Columns start from each source's running estimate (zero on a fresh state).
Eigen::MatrixXd initial_iterate(const std::vector<SourceState>& states) {
  Eigen::MatrixXd B(states[0].p(), static_cast<Eigen::Index>(states.size()));
  for (std::size_t k = 0; k < states.size(); ++k)
    B.col(static_cast<Eigen::Index>(k)) = states[k].beta_prev;
  return B;
}

std::vector<std::vector<int>> nonzero_sets(const Eigen::Ref<const Eigen::MatrixXd>& B) {
  std::vector<std::vector<int>> sets(static_cast<std::size_t>(B.cols()));
  for (Eigen::Index k = 0; k < B.cols(); ++k)
    for (Eigen::Index j = 0; j < B.rows(); ++j)
      if (B(j, k) != 0.0) sets[static_cast<std::size_t>(k)].push_back(static_cast<int>(j));
  return sets;
}

// Modified-BIC dimension penalty, floored at 1 so tiny problems where the
// double log is undefined or negative still pay at least the BIC rate.  The
// 0.75 damping keeps the per-coefficient price below the marginal deviance a
// genuine coordinate buys back at the batch sizes we target; the raw double
// log lands inside the noise band and lets under-selected models win ties.
double mbic_constant(double p_times_k) {
  return std::max(1.0, 0.75 * std::log(std::log(std::max(p_times_k, 2.0))));
}

// Degrees of freedom: one count of nonzeros per recovered group.
int fused_df(const Eigen::Ref<const Eigen::MatrixXd>& B_hat, const Partition& part) {
  int df = 0;
  for (const auto& group : part.groups) {
    const Eigen::Index k = group.front();
    for (Eigen::Index j = 0; j < B_hat.rows(); ++j)
      if (B_hat(j, k) != 0.0) ++df;
  }
  return df;
}

Partition singleton_partition(int K) {
  Partition part;
  part.groups.resize(static_cast<std::size_t>(K));
  part.labels.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    part.groups[static_cast<std::size_t>(k)] = {k};
    part.labels[static_cast<std::size_t>(k)] = k;
  }
  return part;
}

}  // namespace

// ---------------------------------------------------------------------------
// Client-side step.
// ---------------------------------------------------------------------------

LocalSource::LocalSource(const SourceState* state, const Batch* batch, Family fam)
    : state_(state), batch_(batch), fam_(fam) {
  if (state_->p() != batch_->p())
    throw std::invalid_argument("batch width does not match state dimension");
}

LocalReply LocalSource::on_broadcast(const Eigen::Ref<const Eigen::VectorXd>& beta) {
  LocalReply reply;
  reply.beta_bar = beta + step_ * surrogate_score(*state_, fam_, beta, *batch_);
  reply.loss = approx_loglik(*state_, fam_, beta, *batch_);
  if (lipschitz_ < 0.0) {
    const Eigen::MatrixXd neg_curv = -(state_->J_acc + hessian(fam_, beta, *batch_));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(neg_curv, Eigen::EigenvaluesOnly);
    lipschitz_ = std::max(0.0, es.eigenvalues().maxCoeff());
  }
  reply.lipschitz = lipschitz_;
  reply.n_total = state_->n_cum + static_cast<std::uint64_t>(batch_->n());
  return reply;
}

InProcessBackend::InProcessBackend(const std::vector<SourceState>& states,
                                   const std::vector<Batch>& batches, Family fam) {
  check_aligned(states, batches);
  sources_.reserve(states.size());
  for (std::size_t k = 0; k < states.size(); ++k)
    sources_.emplace_back(&states[k], &batches[k], fam);
}

void InProcessBackend::batch_start(int, double, double, double step) {
  for (LocalSource& s : sources_) s.batch_start(step);
}

std::vector<LocalReply> InProcessBackend::broadcast(
    int, const Eigen::Ref<const Eigen::MatrixXd>& B) {
  std::vector<LocalReply> replies;
  replies.reserve(sources_.size());
  for (std::size_t k = 0; k < sources_.size(); ++k)
    replies.push_back(sources_[k].on_broadcast(B.col(static_cast<Eigen::Index>(k))));
  return replies;
}

// ---------------------------------------------------------------------------
// Coordinator-side rounds.
// ---------------------------------------------------------------------------

ProbeInfo probe_round(RoundBackend& backend, int batch_index,
                      const Eigen::Ref<const Eigen::MatrixXd>& B_init) {
  backend.batch_start(batch_index, 0.0, 0.0, 0.0);
  const std::vector<LocalReply> replies = backend.broadcast(0, B_init);
  ProbeInfo probe;
  probe.n_totals.resize(static_cast<Eigen::Index>(replies.size()));
  for (std::size_t k = 0; k < replies.size(); ++k) {
    const double nk = static_cast<double>(replies[k].n_total);
    probe.n_totals[static_cast<Eigen::Index>(k)] = nk;
    probe.n_total += nk;
    probe.l_max = std::max(probe.l_max, replies[k].lipschitz);
  }
  if (!(probe.n_total > 0.0)) throw DataError("no samples reported by any source");
  return probe;
}

FitOutput fit_rounds(RoundBackend& backend, const FolConfig& cfg, double lambda1,
                     double lambda2, int batch_index,
                     const Eigen::Ref<const Eigen::MatrixXd>& B_init,
                     const ProbeInfo& probe, const FusionState* warm_fusion) {
  const Eigen::Index p = B_init.rows();
  const Eigen::Index K = B_init.cols();
  const double N = probe.n_total;

  const double omega_base = cfg.learning_rate ? *cfg.learning_rate
                                              : N / std::max(probe.l_max, 1e-12);
  double omega = omega_base;
  backend.batch_start(batch_index, lambda1, lambda2, omega / N);

  // Effective prox thresholds scale with the step.
  PenaltyConfig pen = cfg.penalty;
  pen.lambda1 = omega * lambda1;
  pen.lambda2 = omega * lambda2;

  FusionState fusion;
  if (warm_fusion && !warm_fusion->empty()) fusion = *warm_fusion;

  Eigen::MatrixXd B = B_init;
  Eigen::MatrixXd B_accept = B;
  Eigen::MatrixXd B_bar(p, K);
  double q_accept = std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  int steps = 0;
  int halvings = 0;
  int round = 1;
  bool converged = false;

  while (steps < cfg.max_outer_iters) {
    const std::vector<LocalReply> replies = backend.broadcast(round++, B);
    double sum_loss = 0.0;
    for (const LocalReply& r : replies) sum_loss += r.loss;
    const double q = -sum_loss / N + penalty_value(B, lambda1, lambda2, pen.a);

    const bool worse =
        !std::isfinite(q) ||
        q > q_accept + 1e-12 * std::max(1.0, std::abs(q_accept));
    if (worse) {
      if (steps == 0)
        throw NumericalError("non-finite objective at the initial iterate");
      if (cfg.learning_rate)
        throw NumericalError(
            "objective increased under the fixed learning rate; lower it or "
            "use the automatic step");
      // The automatic step is Lipschitz-safe for the smooth part, so a
      // persistent increase is evaluation noise from the inexact prox, not
      // overshoot. Once halving has shrunk the step by 2^12 without a real
      // improvement, stop at the best accepted iterate instead of looping.
      if (++halvings > 12) {
        B = B_accept;
        break;
      }
      omega *= 0.5;
      pen.lambda1 = omega * lambda1;
      pen.lambda2 = omega * lambda2;
      backend.batch_start(batch_index, lambda1, lambda2, omega / N);
      B = B_accept;  // retry the step from the last accepted iterate
      continue;
    }
    trace.push_back(q);
    // Re-evaluating the reverted iterate after a halving repeats q exactly;
    // only a material decrease counts as progress for the halving budget.
    if (q < q_accept - 1e-9 * std::max(1.0, std::abs(q_accept))) halvings = 0;
    q_accept = q;
    B_accept = B;

    for (Eigen::Index k = 0; k < K; ++k)
      B_bar.col(k) = replies[static_cast<std::size_t>(k)].beta_bar;
    ProxResult px = prox_operator(B_bar, pen, fusion.empty() ? nullptr : &fusion);
    fusion = std::move(px.fusion);

    const double rel = (px.B - B).norm() / std::max(1.0, B.norm());
    B = std::move(px.B);
    ++steps;
    if (rel < cfg.tol_outer) {
      converged = true;
      break;
    }
    if (omega < omega_base) {
      // Halving is a transient rescue: the prox thresholds scale with omega,
      // so a permanently shrunk step would also weaken selection. Grow back
      // toward the Lipschitz step for the next round, after the current
      // round's prox has used the step its gradients were computed with.
      omega = std::min(omega_base, 2.0 * omega);
      pen.lambda1 = omega * lambda1;
      pen.lambda2 = omega * lambda2;
      backend.batch_start(batch_index, lambda1, lambda2, omega / N);
    }
  }

  FitOutput out;
  out.B_iterate = B;
  out.fusion = fusion;

  FitResult& fit = out.result;
  fit.partition = extract_partition(fusion, B, cfg.merge_tol);
  fit.B_hat = group_average(B, fit.partition, probe.n_totals);
  fit.selected = nonzero_sets(fit.B_hat);
  fit.lambda1 = lambda1;
  fit.lambda2 = lambda2;
  fit.omega = omega;
  fit.outer_iters = steps;
  fit.converged = converged;
  fit.objective_trace = std::move(trace);

  // One more round to price the averaged estimate.
  const std::vector<LocalReply> final_replies = backend.broadcast(round++, fit.B_hat);
  double sum_loss = 0.0;
  for (const LocalReply& r : final_replies) sum_loss += r.loss;
  fit.objective = -sum_loss / N + penalty_value(fit.B_hat, lambda1, lambda2, pen.a);
  const int df = fused_df(fit.B_hat, fit.partition);
  fit.mbic = -2.0 * sum_loss / N +
             mbic_constant(static_cast<double>(p) * static_cast<double>(K)) *
                 (std::log(N) / N) * df;
  return out;
}

std::pair<std::vector<double>, std::vector<double>> default_lambda_grids(
    int p, int K, double n_total) {
  const double pk = std::max(2.0, static_cast<double>(p) * K);
  const double scale1 = std::sqrt(std::log(pk) / n_total);
  const double scale2 = std::sqrt(std::ceil(std::log(pk)) / n_total);
  const int m = 10;
  std::vector<double> lam1(m), lam2(m);
  for (int i = 0; i < m; ++i) {
    // log-spaced multipliers from 0.5 down to 0.01
    const double mult = 0.5 * std::pow(0.01 / 0.5, static_cast<double>(i) / (m - 1));
    lam1[static_cast<std::size_t>(i)] = mult * scale1;
    lam2[static_cast<std::size_t>(i)] = mult * scale2;
  }
  if (K == 1) lam2 = {0.0};
  return {lam1, lam2};
}

FitOutput tune_rounds(RoundBackend& backend, const FolConfig& cfg, int batch_index,
                      const Eigen::Ref<const Eigen::MatrixXd>& B_init) {
  check_config(cfg);
  const ProbeInfo probe = probe_round(backend, batch_index, B_init);

  std::vector<double> lam1 = cfg.lambda1_grid;
  std::vector<double> lam2 = cfg.lambda2_grid;
  if (lam1.empty() || lam2.empty()) {
    auto defaults = default_lambda_grids(static_cast<int>(B_init.rows()),
                                         static_cast<int>(B_init.cols()), probe.n_total);
    if (lam1.empty()) lam1 = std::move(defaults.first);
    if (lam2.empty()) lam2 = std::move(defaults.second);
  }
  std::sort(lam1.rbegin(), lam1.rend());
  std::sort(lam2.rbegin(), lam2.rend());

  FitOutput best;
  bool have_best = false;

  for (double l2 : lam2) {
    // Each row sweeps lambda1 down and then back up, threading one coefficient
    // warm chain through both legs. The descent grows solutions from the
    // sparse end; the ascent re-enters from the dense end, where the fused
    // group structure has already formed, and lets larger thresholds shed the
    // noise that the dense fits admitted. Subgroups that the sparse-end path
    // cannot reach (weak per-source signal that only separates after pooling)
    // are reachable this way. Rows stay independent: carrying an iterate
    // across rows would seed the next row's largest lambda1 with coefficients
    // already past the MCP knot a*lambda1, where the penalty exerts no pull
    // and spurious coordinates can never be shrunk back out. Fusion duals are
    // not carried either: duals tuned to one penalty pair bias the glue
    // decisions of the next fit (an all-glued state from a sparser fit can
    // cancel opposite-signed subgroups and lock the iterate at zero).
    Eigen::MatrixXd B_warm = B_init;
    auto consider = [&](double l1, FitOutput out) {
      B_warm = out.B_iterate;
      const bool better =
          !have_best || out.result.mbic < best.result.mbic ||
          (out.result.mbic == best.result.mbic &&
           (l1 > best.result.lambda1 ||
            (l1 == best.result.lambda1 && l2 > best.result.lambda2)));
      if (better) {
        best = std::move(out);
        have_best = true;
      }
    };
    for (auto it = lam1.begin(); it != lam1.end(); ++it)
      consider(*it, fit_rounds(backend, cfg, *it, l2, batch_index, B_warm, probe,
                               nullptr));
    // The ascent resumes from the bottom of the descent, so the smallest
    // lambda1 is not refit.
    for (auto it = std::next(lam1.rbegin()); it != lam1.rend(); ++it)
      consider(*it, fit_rounds(backend, cfg, *it, l2, batch_index, B_warm, probe,
                               nullptr));
  }
  return best;
}

// ---------------------------------------------------------------------------
// Public entry points.
// ---------------------------------------------------------------------------

FitResult fit_batch(const std::vector<SourceState>& states,
                    const std::vector<Batch>& batches, Family fam,
                    const FolConfig& cfg) {
  check_aligned(states, batches);
  check_config(cfg);
  InProcessBackend backend(states, batches, fam);
  const Eigen::MatrixXd B_init = initial_iterate(states);
  const int b = states[0].batches_seen + 1;
  const ProbeInfo probe = probe_round(backend, b, B_init);
  return fit_rounds(backend, cfg, cfg.penalty.lambda1, cfg.penalty.lambda2, b,
                    B_init, probe, nullptr)
      .result;
}

FitResult tune(const std::vector<SourceState>& states,
               const std::vector<Batch>& batches, Family fam, const FolConfig& cfg) {
  check_aligned(states, batches);
  check_config(cfg);
  InProcessBackend backend(states, batches, fam);
  const Eigen::MatrixXd B_init = initial_iterate(states);
  const int b = states[0].batches_seen + 1;
  return tune_rounds(backend, cfg, b, B_init).result;
}

double objective_value(const std::vector<SourceState>& states,
                       const std::vector<Batch>& batches, Family fam,
                       const Eigen::Ref<const Eigen::MatrixXd>& B,
                       const FolConfig& cfg) {
  check_aligned(states, batches);
  if (B.rows() != states[0].p() ||
      B.cols() != static_cast<Eigen::Index>(states.size()))
    throw std::invalid_argument("coefficient matrix has the wrong shape");
  double n_total = 0.0;
  double sum_loss = 0.0;
  for (std::size_t k = 0; k < states.size(); ++k) {
    n_total += static_cast<double>(states[k].n_cum) + batches[k].n();
    sum_loss += approx_loglik(states[k], fam, B.col(static_cast<Eigen::Index>(k)),
                              batches[k]);
  }
  return -sum_loss / n_total +
         penalty_value(B, cfg.penalty.lambda1, cfg.penalty.lambda2, cfg.penalty.a);
}

FitResult fit_ind(const std::vector<SourceState>& states,
                  const std::vector<Batch>& batches, Family fam,
                  const FolConfig& cfg) {
  check_aligned(states, batches);
  check_config(cfg);
  const int K = static_cast<int>(states.size());
  const Eigen::Index p = states[0].p();

  FitResult fit;
  fit.B_hat.resize(p, K);
  fit.partition = singleton_partition(K);
  fit.lambda1 = std::numeric_limits<double>::quiet_NaN();  // varies by source
  fit.lambda2 = 0.0;
  fit.omega = std::numeric_limits<double>::quiet_NaN();
  fit.objective = std::numeric_limits<double>::quiet_NaN();
  fit.mbic = 0.0;
  fit.converged = true;
  fit.outer_iters = 0;

  FolConfig cfg_one = cfg;
  cfg_one.lambda2_grid = {0.0};
  for (int k = 0; k < K; ++k) {
    const std::vector<SourceState> one_state{states[static_cast<std::size_t>(k)]};
    const std::vector<Batch> one_batch{batches[static_cast<std::size_t>(k)]};
    const FitResult res = tune(one_state, one_batch, fam, cfg_one);
    fit.B_hat.col(k) = res.B_hat.col(0);
    fit.mbic += res.mbic;
    fit.converged = fit.converged && res.converged;
    fit.outer_iters = std::max(fit.outer_iters, res.outer_iters);
  }
  fit.selected = nonzero_sets(fit.B_hat);
  return fit;
}

FitResult fit_homo(const std::vector<SourceState>& states,
                   const std::vector<Batch>& batches, Family fam,
                   const FolConfig& cfg) {
  check_aligned(states, batches);
  check_config(cfg);
  const int K = static_cast<int>(states.size());
  const Eigen::Index p = states[0].p();

  // Per-source tuned fits, then one information-weighted consensus vector.
  const FitResult ind = fit_ind(states, batches, fam, cfg);
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  double n_total = 0.0;
  Eigen::VectorXd weighted_mean = Eigen::VectorXd::Zero(p);
  for (int k = 0; k < K; ++k) {
    const auto& batch = batches[static_cast<std::size_t>(k)];
    const Eigen::VectorXd beta_k = ind.B_hat.col(k);
    const Eigen::MatrixXd info_k =
        -(states[static_cast<std::size_t>(k)].J_acc + hessian(fam, beta_k, batch));
    info += info_k;
    rhs += info_k * beta_k;
    const double nk =
        static_cast<double>(states[static_cast<std::size_t>(k)].n_cum) + batch.n();
    n_total += nk;
    weighted_mean += nk * beta_k;
  }
  info.diagonal().array() += 1e-8;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  Eigen::VectorXd beta = ldlt.solve(rhs);
  if (ldlt.info() != Eigen::Success || !beta.allFinite())
    beta = weighted_mean / n_total;

  FitResult fit;
  fit.B_hat = beta.replicate(1, K);
  fit.partition.groups = {std::vector<int>(static_cast<std::size_t>(K))};
  for (int k = 0; k < K; ++k) fit.partition.groups[0][static_cast<std::size_t>(k)] = k;
  fit.partition.labels.assign(static_cast<std::size_t>(K), 0);
  fit.selected = nonzero_sets(fit.B_hat);
  fit.lambda1 = std::numeric_limits<double>::quiet_NaN();
  fit.lambda2 = std::numeric_limits<double>::quiet_NaN();
  fit.omega = std::numeric_limits<double>::quiet_NaN();
  fit.converged = ind.converged;
  fit.outer_iters = ind.outer_iters;

  double sum_loss = 0.0;
  for (int k = 0; k < K; ++k)
    sum_loss += approx_loglik(states[static_cast<std::size_t>(k)], fam, beta,
                              batches[static_cast<std::size_t>(k)]);
  fit.objective = -sum_loss / n_total;
  int df = 0;
  for (Eigen::Index j = 0; j < p; ++j)
    if (beta[j] != 0.0) ++df;
  fit.mbic = -2.0 * sum_loss / n_total +
             mbic_constant(static_cast<double>(p)) * (std::log(n_total) / n_total) * df;
  return fit;
}

std::vector<Batch> pool_sources(const std::vector<std::vector<Batch>>& by_source) {
  if (by_source.empty()) throw std::invalid_argument("no sources to pool");
  std::vector<Batch> pooled;
  pooled.reserve(by_source.size());
  for (const auto& seq : by_source) {
    if (seq.empty()) throw std::invalid_argument("source has no batches to pool");
    Eigen::Index rows = 0;
    for (const Batch& b : seq) {
      if (b.p() != seq[0].p())
        throw std::invalid_argument("batch widths differ within a source");
      rows += b.n();
    }
    Batch all;
    all.source_id = seq[0].source_id;
    all.batch_index = 1;
    all.X.resize(rows, seq[0].p());
    all.y.resize(rows);
    Eigen::Index at = 0;
    for (const Batch& b : seq) {
      all.X.middleRows(at, b.n()) = b.X;
      all.y.segment(at, b.n()) = b.y;
      at += b.n();
    }
    pooled.push_back(std::move(all));
  }
  return pooled;
}

namespace {

std::vector<SourceState> fresh_states(const std::vector<Batch>& pooled) {
  std::vector<SourceState> states;
  states.reserve(pooled.size());
  for (const Batch& b : pooled) states.push_back(SourceState::fresh(b.source_id, b.p()));
  return states;
}

}  // namespace

FitResult fit_oracle(const std::vector<std::vector<Batch>>& by_source, Family fam,
                     const FolConfig& cfg) {
  const std::vector<Batch> pooled = pool_sources(by_source);
  return fit_batch(fresh_states(pooled), pooled, fam, cfg);
}

FitResult tune_oracle(const std::vector<std::vector<Batch>>& by_source, Family fam,
                      const FolConfig& cfg) {
  const std::vector<Batch> pooled = pool_sources(by_source);
  return tune(fresh_states(pooled), pooled, fam, cfg);
}

// ---------------------------------------------------------------------------
// Canonical result bytes.
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> fit_to_bytes(const FitResult& fit) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kFitMagic, kFitMagic + 4);
  wire::put_u32(out, kFitVersion);
  const Eigen::Index p = fit.B_hat.rows();
  const Eigen::Index K = fit.B_hat.cols();
  wire::put_u32(out, static_cast<std::uint32_t>(p));
  wire::put_u32(out, static_cast<std::uint32_t>(K));
  wire::put_f64(out, fit.lambda1);
  wire::put_f64(out, fit.lambda2);
  wire::put_f64(out, fit.omega);
  wire::put_f64(out, fit.objective);
  wire::put_f64(out, fit.mbic);
  wire::put_u32(out, static_cast<std::uint32_t>(fit.outer_iters));
  wire::put_u8(out, fit.converged ? 1 : 0);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index j = 0; j < p; ++j) wire::put_f64(out, fit.B_hat(j, k));
  for (Eigen::Index k = 0; k < K; ++k)
    wire::put_u32(out, static_cast<std::uint32_t>(
                           fit.partition.labels[static_cast<std::size_t>(k)]));
  wire::put_u32(out, static_cast<std::uint32_t>(fit.objective_trace.size()));
  for (double q : fit.objective_trace) wire::put_f64(out, q);
  return out;
}

FitResult fit_from_bytes(const std::vector<std::uint8_t>& bytes) {
  wire::Reader r{bytes, "fit payload"};
  for (char c : kFitMagic)
    if (r.u8() != static_cast<std::uint8_t>(c)) throw DataError("bad fit payload magic");
  const std::uint32_t version = r.u32();
  if (version != kFitVersion)
    throw DataError("unsupported fit payload version " + std::to_string(version));
  const Eigen::Index p = static_cast<Eigen::Index>(r.u32());
  const Eigen::Index K = static_cast<Eigen::Index>(r.u32());
  FitResult fit;
  fit.lambda1 = r.f64();
  fit.lambda2 = r.f64();
  fit.omega = r.f64();
  fit.objective = r.f64();
  fit.mbic = r.f64();
  fit.outer_iters = static_cast<int>(r.u32());
  fit.converged = r.u8() != 0;
  fit.B_hat.resize(p, K);
  for (Eigen::Index k = 0; k < K; ++k)
    for (Eigen::Index j = 0; j < p; ++j) fit.B_hat(j, k) = r.f64();
  fit.partition.labels.resize(static_cast<std::size_t>(K));
  int G = 0;
  for (Eigen::Index k = 0; k < K; ++k) {
    const int g = static_cast<int>(r.u32());
    fit.partition.labels[static_cast<std::size_t>(k)] = g;
    G = std::max(G, g + 1);
  }
  fit.partition.groups.resize(static_cast<std::size_t>(G));
  for (int k = 0; k < static_cast<int>(K); ++k)
    fit.partition.groups[static_cast<std::size_t>(fit.partition.labels[static_cast<std::size_t>(k)])]
        .push_back(k);
  const std::uint32_t trace_len = r.u32();
  fit.objective_trace.resize(trace_len);
  for (std::uint32_t i = 0; i < trace_len; ++i) fit.objective_trace[i] = r.f64();
  r.expect_done();
  fit.selected = nonzero_sets(fit.B_hat);
  return fit;
}

}  // namespace fol

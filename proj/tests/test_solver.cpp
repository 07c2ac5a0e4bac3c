#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "fol/errors.hpp"
#include "fol/solver.hpp"

using namespace fol;

namespace {

Batch make_batch(Family fam, int source_id, int n, int p, unsigned seed,
                 const Eigen::VectorXd* beta_true = nullptr) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Batch b;
  b.source_id = source_id;
  b.X = Eigen::MatrixXd::NullaryExpr(n, p, [&](Eigen::Index, Eigen::Index) { return gauss(rng); });
  b.y = Eigen::VectorXd(n);
  for (int i = 0; i < n; ++i) {
    const double theta = beta_true ? (b.X.row(i) * (*beta_true)).value() : 0.0;
    if (fam == Family::Gaussian)
      b.y[i] = theta + gauss(rng);
    else
      b.y[i] = unif(rng) < mean_fn(fam, theta) ? 1.0 : 0.0;
  }
  return b;
}

Eigen::VectorXd ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  return X.colPivHouseholderQr().solve(y);
}

std::vector<SourceState> fresh(int K, int p) {
  std::vector<SourceState> states;
  for (int k = 0; k < K; ++k) states.push_back(SourceState::fresh(k, p));
  return states;
}

bool same_bits(const Eigen::Ref<const Eigen::MatrixXd>& a,
               const Eigen::Ref<const Eigen::MatrixXd>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.array() == b.array()).all();
}

// Unpenalized settings that run the smooth part to high accuracy.
FolConfig exact_cfg() {
  FolConfig cfg;
  cfg.penalty.lambda1 = 0.0;
  cfg.penalty.lambda2 = 0.0;
  cfg.tol_outer = 1e-12;
  cfg.max_outer_iters = 20000;
  return cfg;
}

}  // namespace

TEST_CASE("objective_value matches a direct reimplementation") {
  const int K = 3, p = 4;
  std::mt19937 rng(91);
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<SourceState> states = fresh(K, p);
  std::vector<Batch> batches;
  for (int k = 0; k < K; ++k) {
    // give each state some history so the quadratic carry-over is nonzero
    Batch past = make_batch(Family::Logistic, k, 30, p, 100 + k);
    Eigen::VectorXd beta_k =
        Eigen::VectorXd::NullaryExpr(p, [&](Eigen::Index) { return 0.3 * gauss(rng); });
    absorb_batch(states[k], Family::Logistic, beta_k, past);
    batches.push_back(make_batch(Family::Logistic, k, 25, p, 200 + k));
  }
  Eigen::MatrixXd B =
      Eigen::MatrixXd::NullaryExpr(p, K, [&](Eigen::Index, Eigen::Index) { return gauss(rng); });

  FolConfig cfg;
  cfg.penalty.lambda1 = 0.21;
  cfg.penalty.lambda2 = 0.07;

  double n_total = 0.0, loss = 0.0;
  for (int k = 0; k < K; ++k) {
    n_total += static_cast<double>(states[k].n_cum) + batches[k].n();
    const Eigen::VectorXd d = B.col(k) - states[k].beta_prev;
    loss += 0.5 * d.dot(states[k].J_acc * d) +
            log_likelihood(Family::Logistic, B.col(k), batches[k]);
  }
  double pen = 0.0;
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < p; ++j) pen += mcp_value(std::abs(B(j, k)), 0.21, 3.0);
  for (int k1 = 0; k1 < K; ++k1)
    for (int k2 = k1 + 1; k2 < K; ++k2)
      pen += mcp_value((B.col(k1) - B.col(k2)).norm(), 0.07, 3.0);
  const double expected = -loss / n_total + pen;

  CHECK(objective_value(states, batches, Family::Logistic, B, cfg) ==
        doctest::Approx(expected).epsilon(1e-12));

  // all-zero coefficients, no penalty, fresh states: mean Bernoulli deviance
  std::vector<SourceState> fresh_states = fresh(K, p);
  FolConfig cfg0;
  CHECK(objective_value(fresh_states, batches, Family::Logistic,
                        Eigen::MatrixXd::Zero(p, K), cfg0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("unpenalized gaussian fit equals least squares per source") {
  const int p = 5;
  Eigen::VectorXd beta_true(p);
  beta_true << 1.0, -0.5, 0.0, 0.25, 2.0;

  std::vector<Batch> batches;
  batches.push_back(make_batch(Family::Gaussian, 0, 60, p, 7, &beta_true));
  batches.push_back(make_batch(Family::Gaussian, 1, 45, p, 8, &beta_true));
  batches.push_back(make_batch(Family::Gaussian, 2, 80, p, 9));
  std::vector<SourceState> states = fresh(3, p);

  const FitResult fit = fit_batch(states, batches, Family::Gaussian, exact_cfg());
  CHECK(fit.converged);
  for (int k = 0; k < 3; ++k) {
    const Eigen::VectorXd ref = ols(batches[k].X, batches[k].y);
    CHECK((fit.B_hat.col(k) - ref).norm() <= 1e-6);
  }
  // nothing fuses without a fusion penalty
  CHECK(fit.partition.G() == 3);
}

TEST_CASE("gaussian sequential updates match the pooled solution when unpenalized") {
  const int K = 2, p = 6, n = 40;
  Eigen::VectorXd beta_true = Eigen::VectorXd::LinSpaced(p, -1.0, 1.0);
  std::vector<SourceState> states = fresh(K, p);
  std::vector<std::vector<Batch>> history(K);

  for (int b = 0; b < 3; ++b) {
    std::vector<Batch> batches;
    for (int k = 0; k < K; ++k) {
      batches.push_back(make_batch(Family::Gaussian, k, n, p, 1000 + 10 * b + k, &beta_true));
      history[k].push_back(batches.back());
    }
    const FitResult fit = fit_batch(states, batches, Family::Gaussian, exact_cfg());
    for (int k = 0; k < K; ++k)
      absorb_batch(states[k], Family::Gaussian, fit.B_hat.col(k), batches[k]);
  }

  for (int k = 0; k < K; ++k) {
    Eigen::MatrixXd X(3 * n, p);
    Eigen::VectorXd y(3 * n);
    for (int b = 0; b < 3; ++b) {
      X.middleRows(b * n, n) = history[k][b].X;
      y.segment(b * n, n) = history[k][b].y;
    }
    CHECK((states[k].beta_prev - ols(X, y)).norm() <= 1e-6);
  }
}

TEST_CASE("objective trace decreases monotonically") {
  const int K = 3, p = 10;
  Eigen::VectorXd beta_true = Eigen::VectorXd::Zero(p);
  beta_true.head(3) << 0.8, -0.8, 0.5;

  std::vector<Batch> batches;
  for (int k = 0; k < K; ++k)
    batches.push_back(make_batch(Family::Logistic, k, 120, p, 40 + k, &beta_true));
  std::vector<SourceState> states = fresh(K, p);

  FolConfig cfg;
  cfg.penalty.lambda1 = 0.03;
  cfg.penalty.lambda2 = 0.02;
  const FitResult fit = fit_batch(states, batches, Family::Logistic, cfg);

  REQUIRE(fit.objective_trace.size() >= 2);
  for (std::size_t t = 1; t < fit.objective_trace.size(); ++t)
    CHECK(fit.objective_trace[t] <=
          fit.objective_trace[t - 1] + 1e-10 * std::max(1.0, std::abs(fit.objective_trace[t - 1])));
  CHECK(std::isfinite(fit.objective));
  CHECK(fit.outer_iters == static_cast<int>(fit.objective_trace.size()));
}

TEST_CASE("identical sources fuse into a single group with equal columns") {
  const int p = 8;
  Eigen::VectorXd beta_true = Eigen::VectorXd::Zero(p);
  beta_true.head(2) << 1.0, -0.7;
  const Batch shared = make_batch(Family::Gaussian, 0, 100, p, 77, &beta_true);
  Batch twin = shared;
  twin.source_id = 1;

  std::vector<Batch> batches{shared, twin};
  std::vector<SourceState> states = fresh(2, p);
  FolConfig cfg;
  cfg.penalty.lambda1 = 0.05;
  cfg.penalty.lambda2 = 0.05;

  const FitResult fit = fit_batch(states, batches, Family::Gaussian, cfg);
  CHECK(fit.partition.G() == 1);
  CHECK(fit.partition.labels == std::vector<int>{0, 0});
  CHECK(same_bits(fit.B_hat.col(0), fit.B_hat.col(1)));  // exact, after group averaging
  CHECK(fit.selected[0] == fit.selected[1]);
}

TEST_CASE("mbic recomputes from the reported fit") {
  const int K = 2, p = 6;
  Eigen::VectorXd beta_true = Eigen::VectorXd::Zero(p);
  beta_true.head(2) << 0.9, -0.9;
  std::vector<Batch> batches;
  for (int k = 0; k < K; ++k)
    batches.push_back(make_batch(Family::Logistic, k, 90, p, 300 + k, &beta_true));
  std::vector<SourceState> states = fresh(K, p);

  FolConfig cfg;
  cfg.penalty.lambda1 = 0.04;
  cfg.penalty.lambda2 = 0.03;
  const FitResult fit = fit_batch(states, batches, Family::Logistic, cfg);

  double n_total = 0.0, loss = 0.0;
  for (int k = 0; k < K; ++k) {
    n_total += batches[k].n();
    loss += approx_loglik(states[k], Family::Logistic, fit.B_hat.col(k), batches[k]);
  }
  int df = 0;
  for (const auto& group : fit.partition.groups)
    for (int j = 0; j < p; ++j)
      if (fit.B_hat(j, group.front()) != 0.0) ++df;
  const double cn = std::max(1.0, std::log(std::log(static_cast<double>(p) * K)));
  const double expected = -2.0 * loss / n_total + cn * (std::log(n_total) / n_total) * df;
  CHECK(fit.mbic == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("tune over a single grid point reproduces the fixed-penalty fit") {
  const int K = 3, p = 7;
  Eigen::VectorXd beta_true = Eigen::VectorXd::Zero(p);
  beta_true.head(3) << 0.7, 0.7, -0.4;
  std::vector<Batch> batches;
  for (int k = 0; k < K; ++k)
    batches.push_back(make_batch(Family::Gaussian, k, 70, p, 400 + k, &beta_true));
  std::vector<SourceState> states = fresh(K, p);

  FolConfig tuned_cfg;
  tuned_cfg.lambda1_grid = {0.06};
  tuned_cfg.lambda2_grid = {0.04};
  const FitResult tuned = tune(states, batches, Family::Gaussian, tuned_cfg);

  FolConfig fixed_cfg;
  fixed_cfg.penalty.lambda1 = 0.06;
  fixed_cfg.penalty.lambda2 = 0.04;
  const FitResult fixed = fit_batch(states, batches, Family::Gaussian, fixed_cfg);

  CHECK(fit_to_bytes(tuned) == fit_to_bytes(fixed));
}

TEST_CASE("fit result bytes round-trip") {
  const int K = 2, p = 5;
  Eigen::VectorXd beta_true = Eigen::VectorXd::Zero(p);
  beta_true[0] = 1.2;
  std::vector<Batch> batches;
  for (int k = 0; k < K; ++k)
    batches.push_back(make_batch(Family::Logistic, k, 60, p, 500 + k, &beta_true));
  std::vector<SourceState> states = fresh(K, p);

  FolConfig cfg;
  cfg.penalty.lambda1 = 0.05;
  cfg.penalty.lambda2 = 0.02;
  const FitResult fit = fit_batch(states, batches, Family::Logistic, cfg);

  const std::vector<std::uint8_t> bytes = fit_to_bytes(fit);
  const FitResult back = fit_from_bytes(bytes);
  CHECK(same_bits(back.B_hat, fit.B_hat));
  CHECK(back.partition.labels == fit.partition.labels);
  CHECK(back.partition.groups == fit.partition.groups);
  CHECK(back.selected == fit.selected);
  CHECK(back.lambda1 == fit.lambda1);
  CHECK(back.lambda2 == fit.lambda2);
  CHECK(back.omega == fit.omega);
  CHECK(back.objective == fit.objective);
  CHECK(back.mbic == fit.mbic);
  CHECK(back.outer_iters == fit.outer_iters);
  CHECK(back.converged == fit.converged);
  CHECK(back.objective_trace == fit.objective_trace);
  CHECK(fit_to_bytes(back) == bytes);

  std::vector<std::uint8_t> corrupt = bytes;
  corrupt.pop_back();
  CHECK_THROWS_AS(fit_from_bytes(corrupt), DataError);
  corrupt = bytes;
  corrupt[0] = 'X';
  CHECK_THROWS_AS(fit_from_bytes(corrupt), DataError);
}

TEST_CASE("independent fitting with one source matches the lambda2-free path") {
  const int p = 6;
  Eigen::VectorXd beta_true = Eigen::VectorXd::Zero(p);
  beta_true.head(2) << 0.8, -0.6;
  std::vector<Batch> batches{make_batch(Family::Gaussian, 0, 80, p, 600, &beta_true)};
  std::vector<SourceState> states = fresh(1, p);

  FolConfig cfg;
  cfg.lambda1_grid = {0.08};
  const FitResult ind = fit_ind(states, batches, Family::Gaussian, cfg);

  FolConfig fixed;
  fixed.penalty.lambda1 = 0.08;
  fixed.penalty.lambda2 = 0.0;
  const FitResult direct = fit_batch(states, batches, Family::Gaussian, fixed);

  CHECK(same_bits(ind.B_hat, direct.B_hat));
  CHECK(ind.partition.G() == 1);
  CHECK(ind.selected == direct.selected);
}

TEST_CASE("homogeneous baseline pools gaussian sources exactly when unpenalized") {
  const int K = 2, p = 5;
  Eigen::VectorXd beta_true = Eigen::VectorXd::LinSpaced(p, -0.8, 0.8);
  std::vector<Batch> batches;
  for (int k = 0; k < K; ++k)
    batches.push_back(make_batch(Family::Gaussian, k, 50 + 30 * k, p, 700 + k, &beta_true));
  std::vector<SourceState> states = fresh(K, p);

  FolConfig cfg = exact_cfg();
  cfg.lambda1_grid = {0.0};
  cfg.lambda2_grid = {0.0};
  const FitResult homo = fit_homo(states, batches, Family::Gaussian, cfg);

  Eigen::MatrixXd X(batches[0].n() + batches[1].n(), p);
  Eigen::VectorXd y(X.rows());
  X.topRows(batches[0].n()) = batches[0].X;
  X.bottomRows(batches[1].n()) = batches[1].X;
  y.head(batches[0].n()) = batches[0].y;
  y.tail(batches[1].n()) = batches[1].y;

  CHECK(homo.partition.G() == 1);
  CHECK(same_bits(homo.B_hat.col(0), homo.B_hat.col(1)));
  CHECK((homo.B_hat.col(0) - ols(X, y)).norm() <= 1e-5);
}

TEST_CASE("oracle on the first batch is exactly the regular fit") {
  const int K = 2, p = 6;
  Eigen::VectorXd beta_true = Eigen::VectorXd::Zero(p);
  beta_true.head(2) << 0.9, 0.9;
  std::vector<std::vector<Batch>> by_source(K);
  std::vector<Batch> batches;
  for (int k = 0; k < K; ++k) {
    batches.push_back(make_batch(Family::Logistic, k, 70, p, 800 + k, &beta_true));
    by_source[k] = {batches.back()};
  }
  std::vector<SourceState> states = fresh(K, p);

  FolConfig cfg;
  cfg.penalty.lambda1 = 0.05;
  cfg.penalty.lambda2 = 0.03;
  const FitResult direct = fit_batch(states, batches, Family::Logistic, cfg);
  const FitResult oracle = fit_oracle(by_source, Family::Logistic, cfg);
  CHECK(fit_to_bytes(direct) == fit_to_bytes(oracle));
}

TEST_CASE("pool_sources stacks batches in arrival order") {
  std::vector<std::vector<Batch>> by_source(1);
  by_source[0].push_back(make_batch(Family::Gaussian, 4, 3, 2, 900));
  by_source[0].push_back(make_batch(Family::Gaussian, 4, 2, 2, 901));
  const std::vector<Batch> pooled = pool_sources(by_source);
  REQUIRE(pooled.size() == 1);
  CHECK(pooled[0].source_id == 4);
  CHECK(pooled[0].n() == 5);
  CHECK(same_bits(pooled[0].X.topRows(3), by_source[0][0].X));
  CHECK(same_bits(pooled[0].X.bottomRows(2), by_source[0][1].X));
  CHECK(same_bits(pooled[0].y.head(3), by_source[0][0].y));
  CHECK(same_bits(pooled[0].y.tail(2), by_source[0][1].y));
}

TEST_CASE("relabeling sources permutes the fit accordingly") {
  const int K = 3, p = 6;
  std::vector<Batch> batches;
  std::vector<Eigen::VectorXd> betas;
  for (int k = 0; k < K; ++k) {
    Eigen::VectorXd bt = Eigen::VectorXd::Zero(p);
    bt[k] = 1.0;
    betas.push_back(bt);
    batches.push_back(make_batch(Family::Gaussian, k, 90, p, 950 + k, &betas[k]));
  }
  std::vector<SourceState> states = fresh(K, p);

  FolConfig cfg;
  cfg.penalty.lambda1 = 0.05;
  cfg.penalty.lambda2 = 0.02;
  const FitResult fit = fit_batch(states, batches, Family::Gaussian, cfg);

  const std::vector<int> perm{2, 0, 1};  // position i holds old source perm[i]
  std::vector<Batch> batches_p;
  std::vector<SourceState> states_p;
  for (int i = 0; i < K; ++i) {
    batches_p.push_back(batches[static_cast<std::size_t>(perm[i])]);
    states_p.push_back(states[static_cast<std::size_t>(perm[i])]);
  }
  const FitResult fit_p = fit_batch(states_p, batches_p, Family::Gaussian, cfg);

  for (int i = 0; i < K; ++i)
    CHECK((fit_p.B_hat.col(i) - fit.B_hat.col(perm[i])).norm() <= 1e-8);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j)
      CHECK((fit_p.partition.labels[i] == fit_p.partition.labels[j]) ==
            (fit.partition.labels[perm[i]] == fit.partition.labels[perm[j]]));
}

TEST_CASE("two coefficient blocks are recovered over a short stream") {
  const int K = 4, p = 12, n = 120, batches_total = 4;
  std::vector<Eigen::VectorXd> beta_true(K, Eigen::VectorXd::Zero(p));
  for (int k = 0; k < K; ++k) {
    const double sign = k < 2 ? 1.0 : -1.0;
    beta_true[k].head(3) << 0.8 * sign, 0.8 * sign, -0.8 * sign;
  }

  std::vector<SourceState> states = fresh(K, p);
  FolConfig cfg;
  FitResult last;
  for (int b = 0; b < batches_total; ++b) {
    std::vector<Batch> batches;
    for (int k = 0; k < K; ++k)
      batches.push_back(
          make_batch(Family::Gaussian, k, n, p, 2000 + 10 * b + k, &beta_true[k]));
    last = tune(states, batches, Family::Gaussian, cfg);
    for (int k = 0; k < K; ++k)
      absorb_batch(states[k], Family::Gaussian, last.B_hat.col(k), batches[k]);
  }

  CHECK(last.partition.G() == 2);
  CHECK(last.partition.labels == std::vector<int>{0, 0, 1, 1});
  for (int k = 0; k < K; ++k) {
    CHECK((last.B_hat.col(k) - beta_true[k]).norm() <= 0.25);
    for (int j = 0; j < 3; ++j) CHECK(last.B_hat(j, k) != 0.0);
    for (int j = 3; j < p; ++j) CHECK(last.B_hat(j, k) == 0.0);
  }
}

TEST_CASE("configuration and data errors are reported") {
  const int p = 4;
  std::vector<Batch> batches{make_batch(Family::Logistic, 0, 30, p, 1200)};
  std::vector<SourceState> states = fresh(1, p);
  FolConfig cfg;

  SUBCASE("empty batch") {
    batches[0].X.resize(0, p);
    batches[0].y.resize(0);
    CHECK_THROWS_AS(fit_batch(states, batches, Family::Logistic, cfg), DataError);
  }
  SUBCASE("state/batch count mismatch") {
    states.push_back(SourceState::fresh(1, p));
    CHECK_THROWS_AS(fit_batch(states, batches, Family::Logistic, cfg),
                    std::invalid_argument);
  }
  SUBCASE("width mismatch") {
    states[0] = SourceState::fresh(0, p + 1);
    CHECK_THROWS_AS(fit_batch(states, batches, Family::Logistic, cfg),
                    std::invalid_argument);
  }
  SUBCASE("bad iteration cap") {
    cfg.max_outer_iters = 0;
    CHECK_THROWS_AS(fit_batch(states, batches, Family::Logistic, cfg), ConfigError);
  }
  SUBCASE("negative grid entry") {
    cfg.lambda1_grid = {0.1, -0.2};
    CHECK_THROWS_AS(tune(states, batches, Family::Logistic, cfg), ConfigError);
  }
  SUBCASE("oversized fixed learning rate") {
    cfg.learning_rate = 1e8;
    CHECK_THROWS_AS(fit_batch(states, batches, Family::Logistic, cfg), NumericalError);
  }
}

TEST_CASE("default grids scale with the sample count and collapse for one source") {
  const auto [lam1, lam2] = default_lambda_grids(50, 8, 1000.0);
  REQUIRE(lam1.size() == 10);
  REQUIRE(lam2.size() == 10);
  const double scale1 = std::sqrt(std::log(400.0) / 1000.0);
  CHECK(*std::max_element(lam1.begin(), lam1.end()) ==
        doctest::Approx(0.5 * scale1).epsilon(1e-12));
  CHECK(*std::min_element(lam1.begin(), lam1.end()) ==
        doctest::Approx(0.01 * scale1).epsilon(1e-12));
  for (double v : lam2) CHECK(v > 0.0);

  const auto [one1, one2] = default_lambda_grids(50, 1, 1000.0);
  CHECK(one1.size() == 10);
  CHECK(one2 == std::vector<double>{0.0});
}

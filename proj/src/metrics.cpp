#include "fol/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace fol {

namespace {

void check_shapes(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                  const Eigen::Ref<const Eigen::MatrixXd>& B_true) {
  if (B_hat.rows() != B_true.rows() || B_hat.cols() != B_true.cols())
    throw std::invalid_argument("coefficient matrices differ in shape");
  if (B_hat.cols() == 0) throw std::invalid_argument("no sources to score");
}

double binomial2(double n) { return n * (n - 1.0) / 2.0; }

}  // namespace

double true_positive_rate(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                          const Eigen::Ref<const Eigen::MatrixXd>& B_true) {
  check_shapes(B_hat, B_true);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < B_hat.cols(); ++k) {
    int truly = 0, hit = 0;
    for (Eigen::Index j = 0; j < B_hat.rows(); ++j) {
      if (B_true(j, k) == 0.0) continue;
      ++truly;
      if (B_hat(j, k) != 0.0) ++hit;
    }
    acc += truly == 0 ? 1.0 : static_cast<double>(hit) / truly;
  }
  return acc / static_cast<double>(B_hat.cols());
}

double false_positive_rate(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                           const Eigen::Ref<const Eigen::MatrixXd>& B_true) {
  check_shapes(B_hat, B_true);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < B_hat.cols(); ++k) {
    int truly_zero = 0, false_hit = 0;
    for (Eigen::Index j = 0; j < B_hat.rows(); ++j) {
      if (B_true(j, k) != 0.0) continue;
      ++truly_zero;
      if (B_hat(j, k) != 0.0) ++false_hit;
    }
    acc += truly_zero == 0 ? 0.0 : static_cast<double>(false_hit) / truly_zero;
  }
  return acc / static_cast<double>(B_hat.cols());
}

double sum_squared_error(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                         const Eigen::Ref<const Eigen::MatrixXd>& B_true) {
  check_shapes(B_hat, B_true);
  return (B_hat - B_true).squaredNorm() / static_cast<double>(B_hat.cols());
}

double mean_squared_error(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                          const std::vector<Batch>& test_sets) {
  if (static_cast<Eigen::Index>(test_sets.size()) != B_hat.cols())
    throw std::invalid_argument("need one test set per source");
  double acc = 0.0;
  for (Eigen::Index k = 0; k < B_hat.cols(); ++k) {
    const Batch& t = test_sets[static_cast<std::size_t>(k)];
    if (t.n() == 0) throw std::invalid_argument("empty test set");
    acc += (t.y - t.X * B_hat.col(k)).squaredNorm() / static_cast<double>(t.n());
  }
  return acc / static_cast<double>(B_hat.cols());
}

double area_under_curve(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                        const std::vector<Batch>& test_sets) {
  if (static_cast<Eigen::Index>(test_sets.size()) != B_hat.cols())
    throw std::invalid_argument("need one test set per source");
  double acc = 0.0;
  int scored = 0;
  for (Eigen::Index k = 0; k < B_hat.cols(); ++k) {
    const Batch& t = test_sets[static_cast<std::size_t>(k)];
    const Eigen::VectorXd score = t.X * B_hat.col(k);
    const Eigen::Index n = t.n();
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](int a, int b) { return score[a] < score[b]; });

    double rank_pos = 0.0;
    Eigen::Index n_pos = 0;
    for (Eigen::Index lo = 0; lo < n;) {
      Eigen::Index hi = lo;
      while (hi + 1 < n && score[idx[static_cast<std::size_t>(hi + 1)]] ==
                               score[idx[static_cast<std::size_t>(lo)]])
        ++hi;
      const double mean_rank = 0.5 * static_cast<double>(lo + hi) + 1.0;
      for (Eigen::Index t2 = lo; t2 <= hi; ++t2)
        if (t.y[idx[static_cast<std::size_t>(t2)]] != 0.0) {
          rank_pos += mean_rank;
          ++n_pos;
        }
      lo = hi + 1;
    }
    const Eigen::Index n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) continue;  // AUC undefined for this source
    acc += (rank_pos - 0.5 * static_cast<double>(n_pos) *
                           static_cast<double>(n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
    ++scored;
  }
  if (scored == 0) return std::numeric_limits<double>::quiet_NaN();
  return acc / scored;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("labelings must be nonempty and equally sized");
  // compact relabeling, then the pair-counting contingency table
  std::vector<int> ua, ub;
  auto compact = [](const std::vector<int>& v, std::vector<int>& uniq) {
    std::vector<int> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto at = std::find(uniq.begin(), uniq.end(), v[i]);
      if (at == uniq.end()) {
        out[i] = static_cast<int>(uniq.size());
        uniq.push_back(v[i]);
      } else {
        out[i] = static_cast<int>(at - uniq.begin());
      }
    }
    return out;
  };
  const std::vector<int> ca = compact(a, ua);
  const std::vector<int> cb = compact(b, ub);
  const std::size_t ga = ua.size(), gb = ub.size();
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ga),
                                                static_cast<Eigen::Index>(gb));
  for (std::size_t i = 0; i < ca.size(); ++i)
    table(ca[i], cb[i]) += 1.0;

  double sum_cells = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i)
    for (Eigen::Index j = 0; j < table.cols(); ++j) sum_cells += binomial2(table(i, j));
  double sum_rows = 0.0, sum_cols = 0.0;
  for (Eigen::Index i = 0; i < table.rows(); ++i) sum_rows += binomial2(table.row(i).sum());
  for (Eigen::Index j = 0; j < table.cols(); ++j) sum_cols += binomial2(table.col(j).sum());
  const double all_pairs = binomial2(static_cast<double>(a.size()));
  const double expected = all_pairs == 0.0 ? 0.0 : sum_rows * sum_cols / all_pairs;
  const double maximum = 0.5 * (sum_rows + sum_cols);
  if (maximum == expected) return 1.0;  // both labelings trivial and identical
  return (sum_cells - expected) / (maximum - expected);
}

EvalSummary evaluate(const Eigen::Ref<const Eigen::MatrixXd>& B_hat,
                     const Partition& partition,
                     const Eigen::Ref<const Eigen::MatrixXd>& B_true,
                     const std::vector<int>& true_labels, Family fam,
                     const std::vector<Batch>& test_sets) {
  EvalSummary s;
  s.tpr = true_positive_rate(B_hat, B_true);
  s.fpr = false_positive_rate(B_hat, B_true);
  s.sse = sum_squared_error(B_hat, B_true);
  s.predictive = fam == Family::Gaussian ? mean_squared_error(B_hat, test_sets)
                                         : area_under_curve(B_hat, test_sets);
  s.ari = adjusted_rand_index(partition.labels, true_labels);
  s.G_hat = partition.G();
  return s;
}

}  // namespace fol

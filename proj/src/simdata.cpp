#include "fol/simdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fol/errors.hpp"

namespace fol {

namespace {

constexpr int kBlock = 4;            // coordinates per signal block
constexpr double kSignal = 0.6;
constexpr std::uint64_t kBatchBits = 20;
constexpr std::uint64_t kTestTag = (1ull << kBatchBits) - 1;  // reserved pseudo-batch
constexpr std::uint64_t kTruthStream = ~0ull;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t stream_id(int source_id, std::uint64_t batch_tag) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(source_id))
          << kBatchBits) |
         batch_tag;
}

// Uniform in the open interval (0,1); a pure function of its arguments.
double u01(std::uint64_t seed, std::uint64_t stream, std::uint64_t idx) {
  const std::uint64_t h = mix(mix(mix(seed) ^ stream) ^ idx);
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

// One standard normal per slot; each slot owns two uniform indices.
double normal_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t slot) {
  const double u1 = u01(seed, stream, 2 * slot);
  const double u2 = u01(seed, stream, 2 * slot + 1);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

Batch gen_rows(const SimConfig& cfg, int source_id, int batch_index,
               std::uint64_t batch_tag, int n) {
  const SimTruth truth = make_truth(cfg);
  const Eigen::VectorXd beta = truth.B_true.col(source_id);
  const std::uint64_t stream = stream_id(source_id, batch_tag);
  const int p = cfg.p;
  const double carry = 0.5;
  const double fresh = std::sqrt(1.0 - carry * carry);

  Batch batch;
  batch.source_id = source_id;
  batch.batch_index = batch_index;
  batch.X.resize(n, p);
  batch.y.resize(n);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t row_base = static_cast<std::uint64_t>(i) *
                                   static_cast<std::uint64_t>(p + 1);
    double x = normal_at(cfg.seed, stream, row_base);
    batch.X(i, 0) = x;
    for (int j = 1; j < p; ++j) {
      x = carry * x + fresh * normal_at(cfg.seed, stream, row_base + j);
      batch.X(i, j) = x;
    }
    const double theta = batch.X.row(i).dot(beta);
    if (cfg.family == Family::Gaussian) {
      batch.y[i] = theta + normal_at(cfg.seed, stream, row_base + p);
    } else {
      const double u = u01(cfg.seed, stream, 2 * (row_base + p));
      batch.y[i] = u < mean_fn(Family::Logistic, theta) ? 1.0 : 0.0;
    }
  }
  return batch;
}

}  // namespace

void SimConfig::validate() const {
  const int groups = static_cast<int>(design);
  if (p < 2 * kBlock)
    throw ConfigError("p must be at least " + std::to_string(2 * kBlock) +
                      " to place both signal blocks");
  if (K < 1) throw ConfigError("K must be positive");
  if (K % groups != 0)
    throw ConfigError("K must be divisible by the number of groups (" +
                      std::to_string(groups) + ")");
  if (n_first < 1 || n_later < 1 || n_test < 1)
    throw ConfigError("batch and test sizes must be positive");
}

SimTruth make_truth(const SimConfig& cfg) {
  cfg.validate();
  // Seed-keyed shuffle; the first 8 positions become the two signal blocks.
  std::vector<int> order(static_cast<std::size_t>(cfg.p));
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t draw = 0;
  for (int i = cfg.p - 1; i > 0; --i) {
    const int j = static_cast<int>(u01(cfg.seed, kTruthStream, draw++) * (i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  SimTruth truth;
  truth.support1.assign(order.begin(), order.begin() + kBlock);
  truth.support2.assign(order.begin() + kBlock, order.begin() + 2 * kBlock);
  std::sort(truth.support1.begin(), truth.support1.end());
  std::sort(truth.support2.begin(), truth.support2.end());

  const int G = static_cast<int>(cfg.design);
  static constexpr double kPatterns[4][2] = {
      {1.0, 1.0}, {-1.0, -1.0}, {-1.0, 1.0}, {1.0, -1.0}};
  // order of use: one group (+,+); two groups add (-,-); four groups use all
  static constexpr int kOrder4[4] = {0, 2, 3, 1};

  truth.G_true = G;
  truth.B_true = Eigen::MatrixXd::Zero(cfg.p, cfg.K);
  truth.labels.resize(static_cast<std::size_t>(cfg.K));
  const int per_group = cfg.K / G;
  for (int k = 0; k < cfg.K; ++k) {
    const int g = k / per_group;
    truth.labels[static_cast<std::size_t>(k)] = g;
    const int pattern = (G == 4) ? kOrder4[g] : g;
    for (int j : truth.support1)
      truth.B_true(j, k) = kPatterns[pattern][0] * kSignal;
    for (int j : truth.support2)
      truth.B_true(j, k) = kPatterns[pattern][1] * kSignal;
  }
  return truth;
}

int batch_size(const SimConfig& cfg, int batch_index) {
  if (batch_index < 1) throw std::invalid_argument("batch_index starts at 1");
  return batch_index == 1 ? cfg.n_first : cfg.n_later;
}

Batch gen_batch(const SimConfig& cfg, int source_id, int batch_index) {
  cfg.validate();
  if (source_id < 0 || source_id >= cfg.K)
    throw std::invalid_argument("source_id out of range");
  if (batch_index < 1 || static_cast<std::uint64_t>(batch_index) >= kTestTag)
    throw std::invalid_argument("batch_index out of range");
  return gen_rows(cfg, source_id, batch_index,
                  static_cast<std::uint64_t>(batch_index),
                  batch_size(cfg, batch_index));
}

Batch gen_test(const SimConfig& cfg, int source_id) {
  cfg.validate();
  if (source_id < 0 || source_id >= cfg.K)
    throw std::invalid_argument("source_id out of range");
  return gen_rows(cfg, source_id, 0, kTestTag, cfg.n_test);
}

}  // namespace fol

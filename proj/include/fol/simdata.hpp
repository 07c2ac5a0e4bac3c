#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "fol/glm.hpp"

namespace fol {

// Number of coefficient subgroups in the generated population.
enum class Design { OneGroup = 1, TwoGroups = 2, FourGroups = 4 };

struct SimConfig {
  Design design = Design::TwoGroups;
  Family family = Family::Logistic;
  int K = 8;          // sources, split into equal contiguous groups
  int p = 50;         // covariate dimension, at least 8
  int n_first = 100;  // rows in the first batch per source
  int n_later = 80;   // rows in every later batch per source
  int n_test = 2000;  // rows in the held-out evaluation set per source
  std::uint64_t seed = 1;

  void validate() const;
};

// True coefficient layout: two disjoint 4-coordinate signal blocks drawn from
// the seed, entries of magnitude 0.6, with per-group sign patterns
// (+,+), (-,-) for two groups and (+,+), (-,+), (+,-), (-,-) for four.
struct SimTruth {
  Eigen::MatrixXd B_true;    // p x K
  std::vector<int> labels;   // true group of each source
  int G_true = 0;
  std::vector<int> support1;  // first signal block, sorted
  std::vector<int> support2;  // second signal block, sorted
};

SimTruth make_truth(const SimConfig& cfg);

// Rows are AR(1) processes across coordinates: x_1 = z_1 and
// x_j = 0.5 x_{j-1} + sqrt(0.75) z_j, so every coordinate has unit variance
// and corr(x_i, x_j) = 0.5^|i-j|. Responses follow the configured family at
// the source's true coefficients (unit noise variance when gaussian).
//
// Generation is counter-based: every value is a pure function of
// (seed, source, batch, row, column), so any batch can be regenerated in any
// order, on any platform, bit for bit.
Batch gen_batch(const SimConfig& cfg, int source_id, int batch_index);

// Held-out set for one source; drawn from a reserved stream so it never
// overlaps training batches. batch_index is 0 in the returned record.
Batch gen_test(const SimConfig& cfg, int source_id);

// Rows in training batch batch_index (1-based).
int batch_size(const SimConfig& cfg, int batch_index);

}  // namespace fol

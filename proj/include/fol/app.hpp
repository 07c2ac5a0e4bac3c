#pragma once

#include <cstdint>
#include <string>

#include "fol/simdata.hpp"
#include "fol/solver.hpp"

namespace fol {

enum class Mode { Simulate, Stream };
enum class Method { Proposed, Oracle, Ind, Homo };
enum class Transport { InProcess, Socket };

// Everything one experiment run needs: what to solve (method + solver knobs),
// where the data comes from (simulated design or a CSV stream directory), and
// where artifacts go. Exit-code contract: configuration problems exit 2, data
// problems 3, numerical failures 4.
struct ExperimentConfig {
  Mode mode = Mode::Simulate;
  Method method = Method::Proposed;
  Transport transport = Transport::InProcess;
  SimConfig sim;          // Simulate mode: design, family, sizes, seed
  int n_batches = 10;     // Simulate mode; Stream infers it from the files
  int replicates = 1;
  std::uint16_t port = 0;  // Socket transport; 0 binds an ephemeral port
  std::string data_dir;    // Stream mode: source_<k>/batch_<u>.csv layout
  std::string output_dir = ".";
  bool export_data = false;  // Simulate: also write replicate 0's batches
                             // under <output_dir>/data in the stream layout

  FolConfig fol;

  void validate() const;
};

// One key=value assignment; used by both the config-file loader and the flag
// overrides so every spelling is accepted in exactly one place. Throws
// ConfigError with `where` in the message on unknown keys or bad values.
void set_config_key(ExperimentConfig& cfg, const std::string& key,
                    const std::string& value, const std::string& where);

// Flat key=value document, one assignment per line, '#' starts a comment.
ExperimentConfig load_config_file(const std::string& path);

// Runs `replicates` independent simulated streams of the configured method
// and writes summary.csv (final-batch metrics, mean and sd over replicates)
// and trace.csv (per-replicate per-batch trajectories) under output_dir.
// With replicates == 1 it also writes the per-batch artifacts of run_stream
// so a re-ingestion of exported data can be compared file for file. Failed
// replicates are recorded in failures.csv; the returned exit code is 0 when
// every replicate succeeded, else the largest per-replicate error code.
int run_simulation(const ExperimentConfig& cfg);

// Feeds the CSV batches under data_dir through the configured method in
// batch-index order. Per batch u it writes coef_b<u>.csv (one column per
// source, 17-significant-digit cells) and groups_b<u>.csv, and overwrites
// per-source checkpoints under <output_dir>/checkpoints. Returns 0; data
// problems (missing batch, schema drift, bad cells) throw DataError.
int run_stream(const ExperimentConfig& cfg);

// Entry point behind main(): dispatches on cfg.mode and maps exceptions to
// the exit-code contract, printing the message to stderr.
int run_experiment(const ExperimentConfig& cfg);

}  // namespace fol

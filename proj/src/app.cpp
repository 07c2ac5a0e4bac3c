#include "fol/app.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fol/csv.hpp"
#include "fol/errors.hpp"
#include "fol/federation.hpp"
#include "fol/metrics.hpp"

namespace fol {
namespace {

namespace fs = std::filesystem;

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return std::isspace(c) == 0; };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

long long parse_integer(const std::string& value, const std::string& where) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(where + ": expected an integer, got '" + value + "'");
}

int to_int(long long v, const std::string& where, long long lo) {
  if (v < lo || v > std::numeric_limits<int>::max())
    throw ConfigError(where + ": value " + std::to_string(v) + " out of range");
  return static_cast<int>(v);
}

double parse_number(const std::string& value, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError(where + ": expected a number, got '" + value + "'");
}

bool parse_bool(const std::string& value, const std::string& where) {
  const std::string v = lower(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(where + ": expected true or false, got '" + value + "'");
}

// Comma- and/or whitespace-separated nonnegative numbers.
std::vector<double> parse_grid(const std::string& value, const std::string& where) {
  std::string spaced = value;
  std::replace(spaced.begin(), spaced.end(), ',', ' ');
  std::istringstream in(spaced);
  std::vector<double> out;
  std::string token;
  while (in >> token) {
    const double v = parse_number(token, where);
    if (v < 0) throw ConfigError(where + ": penalty levels must be nonnegative");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(where + ": expected at least one number");
  return out;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::Proposed: return "proposed";
    case Method::Oracle: return "oracle";
    case Method::Ind: return "ind";
    case Method::Homo: return "homo";
  }
  return "?";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
  // Surface an unwritable directory as the configuration problem it is,
  // before any solver work runs.
  const fs::path probe = fs::path(dir) / ".write_test";
  {
    std::ofstream out(probe);
    if (!out) throw ConfigError("output directory is not writable: " + dir);
  }
  fs::remove(probe, ec);
}

std::vector<std::string> default_covariate_names(int p) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(p));
  for (int j = 1; j <= p; ++j) names.push_back("x" + std::to_string(j));
  return names;
}

void write_coef_csv(const std::string& path,
                    const Eigen::Ref<const Eigen::MatrixXd>& B,
                    const std::vector<std::string>& variables,
                    const std::vector<int>& source_ids) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"variable"};
  for (int id : source_ids) header.push_back("source_" + std::to_string(id));
  rows.push_back(std::move(header));
  for (Eigen::Index j = 0; j < B.rows(); ++j) {
    std::vector<std::string> row{variables[static_cast<std::size_t>(j)]};
    for (Eigen::Index k = 0; k < B.cols(); ++k) row.push_back(format_g17(B(j, k)));
    rows.push_back(std::move(row));
  }
  write_csv(path, rows);
}

void write_groups_csv(const std::string& path, const Partition& partition,
                      const std::vector<int>& source_ids) {
  std::vector<std::vector<std::string>> rows{{"source", "group"}};
  for (std::size_t k = 0; k < source_ids.size(); ++k)
    rows.push_back({std::to_string(source_ids[k]),
                    std::to_string(partition.labels[k])});
  write_csv(path, rows);
}

void write_checkpoints(const std::string& out_dir,
                       const std::vector<SourceState>& states) {
  const fs::path dir = fs::path(out_dir) / "checkpoints";
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw ConfigError("cannot create " + dir.string() + ": " + ec.message());
  for (const SourceState& s : states)
    save_state(s, (dir / ("source_" + std::to_string(s.source_id) + ".state")).string());
}

// Runs one client over its batch sequence on its own thread; the error is
// rethrown coordinator-side after joining.
struct ClientRun {
  std::thread thread;
  std::exception_ptr error;

  void start(std::uint16_t port, SourceState* state, Family fam,
             const std::vector<std::vector<Batch>>* stream, int rank) {
    thread = std::thread([this, port, state, fam, stream, rank]() {
      try {
        ClientSession session("127.0.0.1", port, state, fam);
        for (const std::vector<Batch>& step : *stream)
          session.run_batch(step[static_cast<std::size_t>(rank)]);
      } catch (...) {
        error = std::current_exception();
      }
    });
  }
};

// Runs the configured method over an in-memory stream. stream[u-1][k] is
// source k's batch at step u. states must be fresh with one entry per source;
// the renewable methods advance them (the oracle leaves them untouched).
// on_fit observes each accepted per-batch fit in stream order; for the socket
// transport it runs on this thread while clients absorb on theirs, so state
// reads belong after drive_stream returns.
void drive_stream(const ExperimentConfig& cfg, Family fam,
                  const std::vector<std::vector<Batch>>& stream,
                  std::vector<SourceState>& states,
                  const std::function<void(int, const FitResult&)>& on_fit) {
  const int n_batches = static_cast<int>(stream.size());
  const int K = static_cast<int>(states.size());

  if (cfg.method == Method::Proposed && cfg.transport == Transport::Socket) {
    std::optional<Coordinator> coord;
    coord.emplace(cfg.port, K);
    std::vector<ClientRun> runs(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
      runs[static_cast<std::size_t>(k)].start(coord->port(),
                                              &states[static_cast<std::size_t>(k)],
                                              fam, &stream, k);
    std::exception_ptr coord_error;
    try {
      coord->accept_sources();
      coordinate_stream(*coord, cfg.fol, n_batches, on_fit);
    } catch (...) {
      coord_error = std::current_exception();
      coord.reset();  // closes the connections so blocked clients exit
    }
    for (ClientRun& r : runs)
      if (r.thread.joinable()) r.thread.join();
    if (coord_error) std::rethrow_exception(coord_error);
    for (const ClientRun& r : runs)
      if (r.error) std::rethrow_exception(r.error);
    return;
  }

  switch (cfg.method) {
    case Method::Proposed:
      for (int u = 1; u <= n_batches; ++u) {
        const std::vector<Batch>& batches = stream[static_cast<std::size_t>(u - 1)];
        const FitResult fit = tune(states, batches, fam, cfg.fol);
        for (int k = 0; k < K; ++k)
          absorb_batch(states[static_cast<std::size_t>(k)], fam, fit.B_hat.col(k),
                       batches[static_cast<std::size_t>(k)]);
        on_fit(u, fit);
      }
      break;
    case Method::Oracle: {
      std::vector<std::vector<Batch>> by_source(static_cast<std::size_t>(K));
      for (int u = 1; u <= n_batches; ++u) {
        for (int k = 0; k < K; ++k)
          by_source[static_cast<std::size_t>(k)].push_back(
              stream[static_cast<std::size_t>(u - 1)][static_cast<std::size_t>(k)]);
        on_fit(u, tune_oracle(by_source, fam, cfg.fol));
      }
      break;
    }
    case Method::Ind:
    case Method::Homo:
      for (int u = 1; u <= n_batches; ++u) {
        const std::vector<Batch>& batches = stream[static_cast<std::size_t>(u - 1)];
        const FitResult fit = cfg.method == Method::Ind
                                  ? fit_ind(states, batches, fam, cfg.fol)
                                  : fit_homo(states, batches, fam, cfg.fol);
        for (int k = 0; k < K; ++k)
          absorb_batch(states[static_cast<std::size_t>(k)], fam, fit.B_hat.col(k),
                       batches[static_cast<std::size_t>(k)]);
        on_fit(u, fit);
      }
      break;
  }
}

std::vector<std::vector<Batch>> simulate_stream(const SimConfig& sim, int n_batches) {
  std::vector<std::vector<Batch>> stream(static_cast<std::size_t>(n_batches));
  for (int u = 1; u <= n_batches; ++u) {
    auto& step = stream[static_cast<std::size_t>(u - 1)];
    step.reserve(static_cast<std::size_t>(sim.K));
    for (int k = 0; k < sim.K; ++k) step.push_back(gen_batch(sim, k, u));
  }
  return stream;
}

struct RepResult {
  std::vector<EvalSummary> per_batch;  // batches completed before any failure
  std::string error;                   // empty on success
  int code = 0;                        // exit code the error maps to
};

RepResult run_one_replicate(const ExperimentConfig& cfg, int rep) {
  RepResult out;
  try {
    SimConfig sim = cfg.sim;
    sim.seed = cfg.sim.seed + static_cast<std::uint64_t>(rep);
    const SimTruth truth = make_truth(sim);
    std::vector<Batch> tests;
    tests.reserve(static_cast<std::size_t>(sim.K));
    for (int k = 0; k < sim.K; ++k) tests.push_back(gen_test(sim, k));
    const std::vector<std::vector<Batch>> stream = simulate_stream(sim, cfg.n_batches);

    std::vector<SourceState> states;
    std::vector<int> ids;
    for (int k = 0; k < sim.K; ++k) {
      states.push_back(SourceState::fresh(k, sim.p));
      ids.push_back(k);
    }

    // A single-replicate run doubles as a recordable stream: it writes the
    // same per-batch artifacts run_stream does, so re-ingesting exported
    // batches can be checked file for file.
    const bool artifacts = cfg.replicates == 1 && rep == 0;
    const std::vector<std::string> names = default_covariate_names(sim.p);
    const bool checkpoint_each =
        artifacts && cfg.method != Method::Oracle && cfg.transport == Transport::InProcess;

    drive_stream(cfg, sim.family, stream, states, [&](int u, const FitResult& fit) {
      out.per_batch.push_back(evaluate(fit.B_hat, fit.partition, truth.B_true,
                                       truth.labels, sim.family, tests));
      if (artifacts) {
        const fs::path dir(cfg.output_dir);
        write_coef_csv((dir / ("coef_b" + std::to_string(u) + ".csv")).string(),
                       fit.B_hat, names, ids);
        write_groups_csv((dir / ("groups_b" + std::to_string(u) + ".csv")).string(),
                         fit.partition, ids);
        if (checkpoint_each) write_checkpoints(cfg.output_dir, states);
      }
    });
    if (artifacts && cfg.method != Method::Oracle && !checkpoint_each)
      write_checkpoints(cfg.output_dir, states);
  } catch (const ConfigError& e) {
    out.error = e.what();
    out.code = 2;
  } catch (const DataError& e) {
    out.error = e.what();
    out.code = 3;
  } catch (const NumericalError& e) {
    out.error = e.what();
    out.code = 4;
  } catch (const std::exception& e) {
    out.error = e.what();
    out.code = 4;
  }
  return out;
}

int worker_count(int replicates) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (n < 1) n = 1;
  if (const char* env = std::getenv("FOL_THREADS")) {
    const long long v = parse_integer(env, "FOL_THREADS");
    if (v < 1) throw ConfigError("FOL_THREADS must be a positive integer");
    n = to_int(v, "FOL_THREADS", 1);
  }
  return std::min(n, replicates);
}

std::pair<double, double> mean_sd(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (static_cast<double>(xs.size()) - 1.0))};
}

// -------------------------------------------------------------------------
// Stream-mode input discovery: source_<k> directories each holding a
// contiguous batch_1.csv .. batch_<n>.csv run of the same covariate schema.
// -------------------------------------------------------------------------

bool parse_digits(const std::string& text, int* out) {
  if (text.empty() || text.size() > 9) return false;
  for (char c : text)
    if (std::isdigit(static_cast<unsigned char>(c)) == 0) return false;
  *out = std::stoi(text);
  return true;
}

struct StreamLayout {
  std::vector<int> source_ids;          // ascending
  std::vector<std::vector<fs::path>> files;  // [rank][u-1]
  int n_batches = 0;
};

StreamLayout scan_stream_dir(const std::string& data_dir) {
  const fs::path root(data_dir);
  if (!fs::is_directory(root))
    throw DataError("data_dir is not a directory: " + data_dir);

  std::map<int, fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("source_", 0) != 0) continue;
    int id = 0;
    if (!entry.is_directory() || !parse_digits(name.substr(7), &id))
      throw DataError("not a source_<k> directory: " + entry.path().string());
    dirs.emplace(id, entry.path());
  }
  if (dirs.empty())
    throw DataError("no source_<k> directories under " + data_dir);

  StreamLayout layout;
  std::vector<std::map<int, fs::path>> found;
  std::vector<fs::path> source_dirs;
  for (const auto& [id, dir] : dirs) {
    std::map<int, fs::path> batches;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (entry.is_directory() || name.rfind("batch_", 0) != 0) continue;
      if (name.size() < 11 || name.substr(name.size() - 4) != ".csv") continue;
      int u = 0;
      if (!parse_digits(name.substr(6, name.size() - 10), &u))
        throw DataError("not a batch_<u>.csv file: " + entry.path().string());
      if (u < 1)
        throw DataError("batch indices start at 1: " + entry.path().string());
      if (!batches.emplace(u, entry.path()).second)
        throw DataError("duplicate batch index " + std::to_string(u) + " under " +
                        dir.string());
      layout.n_batches = std::max(layout.n_batches, u);
    }
    if (batches.empty())
      throw DataError("no batch_<u>.csv files under " + dir.string());
    layout.source_ids.push_back(id);
    source_dirs.push_back(dir);
    found.push_back(std::move(batches));
  }

  layout.files.resize(found.size());
  for (std::size_t k = 0; k < found.size(); ++k) {
    layout.files[k].reserve(static_cast<std::size_t>(layout.n_batches));
    for (int u = 1; u <= layout.n_batches; ++u) {
      const auto it = found[k].find(u);
      if (it == found[k].end())
        throw DataError(
            "missing batch file: " +
            (source_dirs[k] / ("batch_" + std::to_string(u) + ".csv")).string());
      layout.files[k].push_back(it->second);
    }
  }
  return layout;
}

std::vector<std::vector<Batch>> load_stream(const StreamLayout& layout,
                                            std::vector<std::string>* covariates) {
  const std::size_t K = layout.source_ids.size();
  std::vector<std::vector<Batch>> stream(static_cast<std::size_t>(layout.n_batches));
  std::string schema_file;
  for (int u = 1; u <= layout.n_batches; ++u) {
    auto& step = stream[static_cast<std::size_t>(u - 1)];
    step.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
      const std::string file = layout.files[k][static_cast<std::size_t>(u - 1)].string();
      CsvBatch loaded = load_batch_csv(file, layout.source_ids[k], u);
      if (schema_file.empty()) {
        *covariates = loaded.covariates;
        schema_file = file;
      } else if (loaded.covariates != *covariates) {
        throw DataError("covariate schema in " + file + " differs from " + schema_file);
      }
      step.push_back(std::move(loaded.batch));
    }
  }
  return stream;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (replicates < 1) throw ConfigError("replicates must be at least 1");
  if (n_batches < 1) throw ConfigError("n_batches must be at least 1");
  if (output_dir.empty()) throw ConfigError("output directory must not be empty");
  if (transport == Transport::Socket && method != Method::Proposed)
    throw ConfigError(
        "the socket transport applies to method=proposed; baseline methods run in "
        "one process");
  if (transport == Transport::Socket && port != 0 && replicates > 1)
    throw ConfigError(
        "a fixed port cannot serve concurrent replicates; leave port=0 so each "
        "replicate binds its own");
  if (mode == Mode::Stream) {
    if (data_dir.empty()) throw ConfigError("stream mode requires data_dir");
    if (replicates != 1)
      throw ConfigError("stream mode replays recorded batches once; replicates must be 1");
  } else {
    sim.validate();
  }
}

void set_config_key(ExperimentConfig& cfg, const std::string& key,
                    const std::string& value, const std::string& where) {
  const std::string k = lower(trim(key));
  const std::string v = trim(value);
  const std::string at = where + " ('" + k + "')";
  if (k == "mode") {
    const std::string m = lower(v);
    if (m == "simulate") cfg.mode = Mode::Simulate;
    else if (m == "stream") cfg.mode = Mode::Stream;
    else throw ConfigError(at + ": expected simulate or stream, got '" + v + "'");
  } else if (k == "method") {
    const std::string m = lower(v);
    if (m == "proposed") cfg.method = Method::Proposed;
    else if (m == "oracle") cfg.method = Method::Oracle;
    else if (m == "ind") cfg.method = Method::Ind;
    else if (m == "homo") cfg.method = Method::Homo;
    else throw ConfigError(at + ": expected proposed, oracle, ind, or homo, got '" + v + "'");
  } else if (k == "transport") {
    const std::string m = lower(v);
    if (m == "inprocess") cfg.transport = Transport::InProcess;
    else if (m == "socket") cfg.transport = Transport::Socket;
    else throw ConfigError(at + ": expected inprocess or socket, got '" + v + "'");
  } else if (k == "example") {
    const long long e = parse_integer(v, at);
    if (e == 1) {
      cfg.sim.design = Design::OneGroup;
      cfg.sim.family = Family::Logistic;
    } else if (e == 2) {
      cfg.sim.design = Design::TwoGroups;
      cfg.sim.family = Family::Logistic;
    } else if (e == 3) {
      cfg.sim.design = Design::FourGroups;
      cfg.sim.family = Family::Gaussian;
    } else {
      throw ConfigError(at + ": examples are 1, 2, or 3");
    }
  } else if (k == "family") {
    const std::string m = lower(v);
    if (m == "gaussian") cfg.sim.family = Family::Gaussian;
    else if (m == "logistic") cfg.sim.family = Family::Logistic;
    else throw ConfigError(at + ": expected gaussian or logistic, got '" + v + "'");
  } else if (k == "k") {
    cfg.sim.K = to_int(parse_integer(v, at), at, 1);
  } else if (k == "p") {
    cfg.sim.p = to_int(parse_integer(v, at), at, 1);
  } else if (k == "n_first") {
    cfg.sim.n_first = to_int(parse_integer(v, at), at, 1);
  } else if (k == "n_later") {
    cfg.sim.n_later = to_int(parse_integer(v, at), at, 1);
  } else if (k == "n_test") {
    cfg.sim.n_test = to_int(parse_integer(v, at), at, 1);
  } else if (k == "n_batches") {
    cfg.n_batches = to_int(parse_integer(v, at), at, 1);
  } else if (k == "replicates") {
    cfg.replicates = to_int(parse_integer(v, at), at, 1);
  } else if (k == "seed") {
    const long long s = parse_integer(v, at);
    if (s < 0) throw ConfigError(at + ": seed must be nonnegative");
    cfg.sim.seed = static_cast<std::uint64_t>(s);
  } else if (k == "out") {
    cfg.output_dir = v;
  } else if (k == "data_dir") {
    cfg.data_dir = v;
  } else if (k == "export_data") {
    cfg.export_data = parse_bool(v, at);
  } else if (k == "port") {
    const long long p = parse_integer(v, at);
    if (p < 0 || p > 65535) throw ConfigError(at + ": port must be in [0, 65535]");
    cfg.port = static_cast<std::uint16_t>(p);
  } else if (k == "lambda1_grid") {
    cfg.fol.lambda1_grid = parse_grid(v, at);
  } else if (k == "lambda2_grid") {
    cfg.fol.lambda2_grid = parse_grid(v, at);
  } else if (k == "learning_rate") {
    if (lower(v) == "auto") {
      cfg.fol.learning_rate.reset();
    } else {
      const double r = parse_number(v, at);
      if (r <= 0) throw ConfigError(at + ": learning rate must be positive (or auto)");
      cfg.fol.learning_rate = r;
    }
  } else if (k == "max_outer_iters") {
    cfg.fol.max_outer_iters = to_int(parse_integer(v, at), at, 1);
  } else if (k == "tol_outer") {
    const double t = parse_number(v, at);
    if (t <= 0) throw ConfigError(at + ": tolerance must be positive");
    cfg.fol.tol_outer = t;
  } else if (k == "merge_tol") {
    const double t = parse_number(v, at);
    if (t < 0) throw ConfigError(at + ": merge tolerance must be nonnegative");
    cfg.fol.merge_tol = t;
  } else if (k == "a") {
    cfg.fol.penalty.a = parse_number(v, at);
  } else if (k == "admm_rho") {
    cfg.fol.penalty.admm_rho = parse_number(v, at);
  } else if (k == "max_admm_iters") {
    cfg.fol.penalty.max_admm_iters = to_int(parse_integer(v, at), at, 1);
  } else {
    throw ConfigError(where + ": unknown config key '" + trim(key) + "'");
  }
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  ExperimentConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    const std::string at = path + ":" + std::to_string(lineno);
    if (eq == std::string::npos)
      throw ConfigError(at + ": expected key = value");
    set_config_key(cfg, line.substr(0, eq), line.substr(eq + 1), at);
  }
  return cfg;
}

int run_simulation(const ExperimentConfig& cfg) {
  cfg.validate();
  ensure_dir(cfg.output_dir);

  if (cfg.export_data) {
    // Replicate 0's batches in the stream layout, for re-ingestion.
    const std::vector<std::vector<Batch>> stream = simulate_stream(cfg.sim, cfg.n_batches);
    const std::vector<std::string> names = default_covariate_names(cfg.sim.p);
    for (int k = 0; k < cfg.sim.K; ++k) {
      const fs::path dir =
          fs::path(cfg.output_dir) / "data" / ("source_" + std::to_string(k));
      ensure_dir(dir.string());
      for (int u = 1; u <= cfg.n_batches; ++u)
        write_batch_csv((dir / ("batch_" + std::to_string(u) + ".csv")).string(),
                        stream[static_cast<std::size_t>(u - 1)][static_cast<std::size_t>(k)],
                        names);
    }
  }

  std::vector<RepResult> results(static_cast<std::size_t>(cfg.replicates));
  const int workers = worker_count(cfg.replicates);
  if (workers <= 1) {
    for (int r = 0; r < cfg.replicates; ++r)
      results[static_cast<std::size_t>(r)] = run_one_replicate(cfg, r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&]() {
        for (int r = next.fetch_add(1); r < cfg.replicates; r = next.fetch_add(1))
          results[static_cast<std::size_t>(r)] = run_one_replicate(cfg, r);
      });
    for (std::thread& t : pool) t.join();
  }

  std::vector<std::vector<std::string>> trace{
      {"replicate", "batch", "tpr", "fpr", "sse", "auc_or_mse", "ghat", "ari"}};
  for (int r = 0; r < cfg.replicates; ++r) {
    const RepResult& res = results[static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < res.per_batch.size(); ++i) {
      const EvalSummary& s = res.per_batch[i];
      trace.push_back({std::to_string(r), std::to_string(i + 1), format_fixed3(s.tpr),
                       format_fixed3(s.fpr), format_fixed3(s.sse),
                       format_fixed3(s.predictive), format_fixed3(s.G_hat),
                       format_fixed3(s.ari)});
    }
  }
  write_csv((fs::path(cfg.output_dir) / "trace.csv").string(), trace);

  std::vector<EvalSummary> finals;
  for (const RepResult& res : results)
    if (res.code == 0 && static_cast<int>(res.per_batch.size()) == cfg.n_batches)
      finals.push_back(res.per_batch.back());

  std::vector<std::vector<std::string>> summary{
      {"p", "n", "method", "tpr_mean", "tpr_sd", "fpr_mean", "fpr_sd", "sse_mean",
       "sse_sd", "auc_or_mse_mean", "auc_or_mse_sd", "ghat_mean", "ghat_sd",
       "ari_mean", "ari_sd"}};
  if (!finals.empty()) {
    std::vector<std::string> row{std::to_string(cfg.sim.p),
                                 std::to_string(cfg.sim.n_later),
                                 method_name(cfg.method)};
    const auto add = [&](const std::function<double(const EvalSummary&)>& get) {
      std::vector<double> xs;
      xs.reserve(finals.size());
      for (const EvalSummary& s : finals) xs.push_back(get(s));
      const auto [mean, sd] = mean_sd(xs);
      row.push_back(format_fixed3(mean));
      row.push_back(format_fixed3(sd));
    };
    add([](const EvalSummary& s) { return s.tpr; });
    add([](const EvalSummary& s) { return s.fpr; });
    add([](const EvalSummary& s) { return s.sse; });
    add([](const EvalSummary& s) { return s.predictive; });
    add([](const EvalSummary& s) { return static_cast<double>(s.G_hat); });
    add([](const EvalSummary& s) { return s.ari; });
    summary.push_back(std::move(row));
  }
  write_csv((fs::path(cfg.output_dir) / "summary.csv").string(), summary);

  int exit_code = 0;
  std::vector<std::vector<std::string>> failures{{"replicate", "exit_code", "error"}};
  for (int r = 0; r < cfg.replicates; ++r) {
    const RepResult& res = results[static_cast<std::size_t>(r)];
    if (res.code == 0) continue;
    failures.push_back({std::to_string(r), std::to_string(res.code), res.error});
    exit_code = std::max(exit_code, res.code);
  }
  if (exit_code != 0)
    write_csv((fs::path(cfg.output_dir) / "failures.csv").string(), failures);
  return exit_code;
}

int run_stream(const ExperimentConfig& cfg) {
  cfg.validate();
  const StreamLayout layout = scan_stream_dir(cfg.data_dir);
  std::vector<std::string> covariates;
  const std::vector<std::vector<Batch>> stream = load_stream(layout, &covariates);
  const int p = static_cast<int>(covariates.size());

  ensure_dir(cfg.output_dir);
  std::vector<SourceState> states;
  for (int id : layout.source_ids) states.push_back(SourceState::fresh(id, p));

  const bool checkpoint_each =
      cfg.method != Method::Oracle && cfg.transport == Transport::InProcess;
  drive_stream(cfg, cfg.sim.family, stream, states, [&](int u, const FitResult& fit) {
    const fs::path dir(cfg.output_dir);
    write_coef_csv((dir / ("coef_b" + std::to_string(u) + ".csv")).string(), fit.B_hat,
                   covariates, layout.source_ids);
    write_groups_csv((dir / ("groups_b" + std::to_string(u) + ".csv")).string(),
                     fit.partition, layout.source_ids);
    if (checkpoint_each) write_checkpoints(cfg.output_dir, states);
  });
  if (cfg.method != Method::Oracle && !checkpoint_each)
    write_checkpoints(cfg.output_dir, states);
  return 0;
}

int run_experiment(const ExperimentConfig& cfg) {
  try {
    return cfg.mode == Mode::Simulate ? run_simulation(cfg) : run_stream(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
}

}  // namespace fol

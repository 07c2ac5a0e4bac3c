#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <Eigen/Dense>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fol/app.hpp"
#include "fol/csv.hpp"
#include "fol/errors.hpp"
#include "fol/simdata.hpp"

using namespace fol;
namespace fs = std::filesystem;

namespace {

// Fresh, self-deleting scratch directory per test.
struct TempDir {
  fs::path path;

  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("fol_io_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter.fetch_add(1)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }

  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path.string() : (path / rel).string();
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FOL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

Batch small_gaussian_batch(int n, int p, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Batch b;
  b.source_id = 0;
  b.batch_index = 1;
  b.X = Eigen::MatrixXd::NullaryExpr(
      n, p, [&](Eigen::Index, Eigen::Index) { return gauss(rng); });
  b.y = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index i) {
    return 0.5 * b.X(i, 0) - 0.25 * b.X(i, p - 1) + 0.1 * gauss(rng);
  });
  return b;
}

}  // namespace

TEST_CASE("csv reader handles quoting, embedded separators, and CRLF") {
  TempDir tmp;
  const std::string path = tmp.str("quirks.csv");
  spit(path,
       "a,\"b,1\",\"say \"\"hi\"\"\"\r\n"
       "\"multi\nline\",,c\n"
       "x,y,\n");
  const auto rows = read_csv(path);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] == std::vector<std::string>{"a", "b,1", "say \"hi\""});
  CHECK(rows[1] == std::vector<std::string>{"multi\nline", "", "c"});
  CHECK(rows[2] == std::vector<std::string>{"x", "y", ""});
}

TEST_CASE("csv writer quotes exactly what needs quoting and round-trips") {
  TempDir tmp;
  const std::string path = tmp.str("rt.csv");
  const std::vector<std::vector<std::string>> rows = {
      {"plain", "with,comma", "with\"quote"},
      {"with\nnewline", "", "trailing"},
  };
  write_csv(path, rows);
  CHECK(read_csv(path) == rows);
  const std::string raw = slurp(path);
  CHECK(raw.find("plain,") == 0);             // unquoted when safe
  CHECK(raw.find("\"with,comma\"") != std::string::npos);
  CHECK(raw.find('\r') == std::string::npos);  // LF endings
}

TEST_CASE("csv reader rejects malformed quoting with a line number") {
  TempDir tmp;
  const std::string unterminated = tmp.str("u.csv");
  spit(unterminated, "a,b\n\"open,c\n");
  CHECK_THROWS_AS(read_csv(unterminated), DataError);

  const std::string stray = tmp.str("s.csv");
  spit(stray, "a,b\nc,d\"e\n");
  try {
    read_csv(stray);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("coefficient formatting round-trips doubles exactly") {
  const double values[] = {0.1, -1.0 / 3.0, 1e-17, 6.02e23, -0.0, 123456.789};
  for (double v : values) {
    const std::string text = format_g17(v);
    CHECK(std::stod(text) == v);
  }
  CHECK(format_fixed3(0.8266) == "0.827");
  CHECK(format_fixed3(-1.0 / 3.0) == "-0.333");
  CHECK(format_fixed3(2.0) == "2.000");
}

TEST_CASE("parse_cell names the file, row, and column of a bad value") {
  CHECK(parse_cell("1.25e-3", "f.csv", 1, 1) == doctest::Approx(1.25e-3));
  try {
    parse_cell("12x", "f.csv", 7, 3);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("f.csv") != std::string::npos);
    CHECK(msg.find("7") != std::string::npos);
    CHECK(msg.find("3") != std::string::npos);
  }
}

TEST_CASE("batch csv round-trip is exact and y may sit in any column") {
  TempDir tmp;
  const Batch batch = small_gaussian_batch(12, 5, 42);
  const std::vector<std::string> names = {"age", "dose", "bmi", "hr", "wt"};
  const std::string path = tmp.str("batch.csv");
  write_batch_csv(path, batch, names);

  const CsvBatch back = load_batch_csv(path, batch.source_id, batch.batch_index);
  CHECK(back.covariates == names);
  CHECK(back.batch.X == batch.X);  // 17-digit cells reproduce every bit
  CHECK(back.batch.y == batch.y);

  // y first instead of last
  const std::string path2 = tmp.str("yfirst.csv");
  spit(path2, "y,a,b\n1,0.5,2\n0,-1,3\n");
  const CsvBatch first = load_batch_csv(path2, 0, 1);
  CHECK(first.covariates == std::vector<std::string>{"a", "b"});
  CHECK(first.batch.X(1, 0) == -1.0);
  CHECK(first.batch.y(0) == 1.0);
}

TEST_CASE("batch csv loader rejects structural problems") {
  TempDir tmp;
  const std::string no_y = tmp.str("noy.csv");
  spit(no_y, "a,b\n1,2\n");
  CHECK_THROWS_AS(load_batch_csv(no_y, 0, 1), DataError);

  const std::string two_y = tmp.str("twoy.csv");
  spit(two_y, "y,a,y\n1,2,3\n");
  CHECK_THROWS_AS(load_batch_csv(two_y, 0, 1), DataError);

  const std::string ragged = tmp.str("ragged.csv");
  spit(ragged, "y,a,b\n1,2,3\n4,5\n");
  CHECK_THROWS_AS(load_batch_csv(ragged, 0, 1), DataError);

  const std::string empty_body = tmp.str("empty.csv");
  spit(empty_body, "y,a,b\n");
  CHECK_THROWS_AS(load_batch_csv(empty_body, 0, 1), DataError);
}

TEST_CASE("config keys cover the documented schema and reject the rest") {
  ExperimentConfig cfg;
  set_config_key(cfg, "mode", "stream", "t");
  CHECK(cfg.mode == Mode::Stream);
  set_config_key(cfg, "method", "homo", "t");
  CHECK(cfg.method == Method::Homo);
  set_config_key(cfg, "transport", "socket", "t");
  CHECK(cfg.transport == Transport::Socket);
  set_config_key(cfg, "example", "3", "t");
  CHECK(cfg.sim.design == Design::FourGroups);
  CHECK(cfg.sim.family == Family::Gaussian);
  set_config_key(cfg, "family", "logistic", "t");
  CHECK(cfg.sim.family == Family::Logistic);
  set_config_key(cfg, "K", "6", "t");  // keys are case-insensitive
  CHECK(cfg.sim.K == 6);
  set_config_key(cfg, "lambda1_grid", "0.5, 0.25 0.125", "t");
  CHECK(cfg.fol.lambda1_grid == std::vector<double>{0.5, 0.25, 0.125});
  set_config_key(cfg, "learning_rate", "0.5", "t");
  CHECK(cfg.fol.learning_rate == 0.5);
  set_config_key(cfg, "learning_rate", "auto", "t");
  CHECK(!cfg.fol.learning_rate.has_value());
  set_config_key(cfg, "seed", "99", "t");
  CHECK(cfg.sim.seed == 99);

  CHECK_THROWS_AS(set_config_key(cfg, "mystery", "1", "t"), ConfigError);
  CHECK_THROWS_AS(set_config_key(cfg, "p", "ten", "t"), ConfigError);
  CHECK_THROWS_AS(set_config_key(cfg, "port", "70000", "t"), ConfigError);
  CHECK_THROWS_AS(set_config_key(cfg, "lambda1_grid", "-0.1", "t"), ConfigError);
  CHECK_THROWS_AS(set_config_key(cfg, "method", "best", "t"), ConfigError);
}

TEST_CASE("config files allow comments and report the offending line") {
  TempDir tmp;
  const std::string path = tmp.str("run.cfg");
  spit(path,
       "# comment line\n"
       "mode = simulate   # trailing comment\n"
       "\n"
       "method=ind\n"
       "n_batches = 4\n"
       "out = results\n");
  const ExperimentConfig cfg = load_config_file(path);
  CHECK(cfg.mode == Mode::Simulate);
  CHECK(cfg.method == Method::Ind);
  CHECK(cfg.n_batches == 4);
  CHECK(cfg.output_dir == "results");

  const std::string bad = tmp.str("bad.cfg");
  spit(bad, "mode = simulate\nnot a pair\n");
  try {
    load_config_file(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("experiment config validation rejects inconsistent combinations") {
  ExperimentConfig cfg;
  cfg.replicates = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.replicates = 1;

  cfg.transport = Transport::Socket;
  cfg.method = Method::Homo;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.method = Method::Proposed;

  cfg.mode = Mode::Stream;
  cfg.data_dir.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("stream mode validates the directory layout before fitting") {
  TempDir tmp;
  const Batch b = small_gaussian_batch(10, 3, 7);
  const std::vector<std::string> names = {"a", "b", "c"};
  for (int k = 0; k < 2; ++k) {
    const fs::path dir = tmp.path / "data" / ("source_" + std::to_string(k));
    fs::create_directories(dir);
    write_batch_csv((dir / "batch_1.csv").string(), b, names);
    write_batch_csv((dir / "batch_2.csv").string(), b, names);
  }

  ExperimentConfig cfg;
  cfg.mode = Mode::Stream;
  cfg.method = Method::Ind;
  cfg.sim.family = Family::Gaussian;
  cfg.data_dir = tmp.str("data");
  cfg.output_dir = tmp.str("out");

  SUBCASE("a missing batch index names the gap") {
    fs::remove(tmp.path / "data" / "source_1" / "batch_1.csv");
    try {
      run_stream(cfg);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("batch_1.csv") != std::string::npos);
      CHECK(std::string(e.what()).find("source_1") != std::string::npos);
    }
  }

  SUBCASE("schema drift names both files") {
    write_batch_csv((tmp.path / "data" / "source_1" / "batch_2.csv").string(), b,
                    {"a", "b", "z"});
    try {
      run_stream(cfg);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("source_1") != std::string::npos);
      CHECK(std::string(e.what()).find("differs") != std::string::npos);
    }
  }

  SUBCASE("an empty data directory is a data error") {
    fs::remove_all(tmp.path / "data" / "source_0");
    fs::remove_all(tmp.path / "data" / "source_1");
    CHECK_THROWS_AS(run_stream(cfg), DataError);
  }

  SUBCASE("the intact layout runs and writes per-batch artifacts") {
    CHECK(run_stream(cfg) == 0);
    CHECK(fs::exists(tmp.path / "out" / "coef_b1.csv"));
    CHECK(fs::exists(tmp.path / "out" / "coef_b2.csv"));
    CHECK(fs::exists(tmp.path / "out" / "groups_b2.csv"));
    CHECK(fs::exists(tmp.path / "out" / "checkpoints" / "source_0.state"));
    CHECK(fs::exists(tmp.path / "out" / "checkpoints" / "source_1.state"));
  }
}

TEST_CASE("one unpenalized gaussian source streamed from csv recovers ols") {
  TempDir tmp;
  const Batch b = small_gaussian_batch(60, 4, 11);
  const fs::path dir = tmp.path / "data" / "source_0";
  fs::create_directories(dir);
  write_batch_csv((dir / "batch_1.csv").string(), b, {"a", "b", "c", "d"});

  ExperimentConfig cfg;
  cfg.mode = Mode::Stream;
  cfg.method = Method::Proposed;
  cfg.sim.family = Family::Gaussian;
  cfg.data_dir = tmp.str("data");
  cfg.output_dir = tmp.str("out");
  cfg.fol.lambda1_grid = {0.0};
  cfg.fol.lambda2_grid = {0.0};
  cfg.fol.tol_outer = 1e-12;
  cfg.fol.max_outer_iters = 20000;
  REQUIRE(run_stream(cfg) == 0);

  const auto rows = read_csv(tmp.str("out/coef_b1.csv"));
  REQUIRE(rows.size() == 5);  // header + 4 coefficients
  CHECK(rows[0] == std::vector<std::string>{"variable", "source_0"});
  const Eigen::VectorXd ols = b.X.colPivHouseholderQr().solve(b.y);
  for (int j = 0; j < 4; ++j)
    CHECK(std::stod(rows[static_cast<std::size_t>(j + 1)][1]) ==
          doctest::Approx(ols(j)).epsilon(1e-6));
}

TEST_CASE("simulation artifacts re-ingest byte for byte through stream mode") {
  TempDir tmp;
  ExperimentConfig cfg;
  cfg.mode = Mode::Simulate;
  cfg.method = Method::Proposed;
  cfg.sim.design = Design::TwoGroups;
  cfg.sim.family = Family::Gaussian;
  cfg.sim.K = 4;
  cfg.sim.p = 10;
  cfg.sim.n_first = 30;
  cfg.sim.n_later = 20;
  cfg.sim.n_test = 40;
  cfg.sim.seed = 3;
  cfg.n_batches = 2;
  cfg.replicates = 1;
  cfg.output_dir = tmp.str("sim");
  cfg.export_data = true;
  REQUIRE(run_simulation(cfg) == 0);

  ExperimentConfig replay = cfg;
  replay.mode = Mode::Stream;
  replay.data_dir = tmp.str("sim/data");
  replay.output_dir = tmp.str("replay");
  replay.export_data = false;
  REQUIRE(run_stream(replay) == 0);

  for (int u = 1; u <= 2; ++u) {
    const std::string coef = "coef_b" + std::to_string(u) + ".csv";
    const std::string groups = "groups_b" + std::to_string(u) + ".csv";
    CHECK(slurp(tmp.str("sim/" + coef)) == slurp(tmp.str("replay/" + coef)));
    CHECK(slurp(tmp.str("sim/" + groups)) == slurp(tmp.str("replay/" + groups)));
  }
  for (int k = 0; k < 4; ++k) {
    const std::string state = "checkpoints/source_" + std::to_string(k) + ".state";
    CHECK(slurp(tmp.str("sim/" + state)) == slurp(tmp.str("replay/" + state)));
  }
}

TEST_CASE("summary and trace tables have the documented shape") {
  TempDir tmp;
  ExperimentConfig cfg;
  cfg.mode = Mode::Simulate;
  cfg.method = Method::Ind;
  cfg.sim.design = Design::TwoGroups;
  cfg.sim.family = Family::Gaussian;
  cfg.sim.K = 4;
  cfg.sim.p = 10;
  cfg.sim.n_first = 25;
  cfg.sim.n_later = 20;
  cfg.sim.n_test = 40;
  cfg.sim.seed = 2;
  cfg.n_batches = 3;
  cfg.replicates = 2;
  cfg.output_dir = tmp.str("out");
  REQUIRE(run_simulation(cfg) == 0);

  const auto summary = read_csv(tmp.str("out/summary.csv"));
  REQUIRE(summary.size() == 2);
  CHECK(summary[0][0] == "p");
  CHECK(summary[0][2] == "method");
  REQUIRE(summary[1].size() == 15);
  CHECK(summary[1][0] == "10");
  CHECK(summary[1][1] == "20");
  CHECK(summary[1][2] == "ind");
  for (std::size_t c = 3; c < 15; ++c)  // every metric cell is a 3-decimal number
    CHECK(summary[1][c].find('.') != std::string::npos);

  const auto trace = read_csv(tmp.str("out/trace.csv"));
  REQUIRE(trace.size() == 1 + 2 * 3);  // header + replicates x batches
  CHECK(trace[1][0] == "0");
  CHECK(trace[1][1] == "1");
  CHECK(trace[6][0] == "1");
  CHECK(trace[6][1] == "3");
}

TEST_CASE("cli exit codes follow the documented contract") {
  TempDir tmp;
  CHECK(run_cli("--no-such-flag") == 2);
  CHECK(run_cli("--method fastest") == 2);
  CHECK(run_cli("--mode stream --out " + tmp.str("o")) == 2);  // missing data_dir
  CHECK(run_cli("--mode stream --data-dir " + tmp.str("nowhere") + " --out " +
                tmp.str("o")) == 3);

  // A fixed learning rate large enough to blow up maps to the numerical code.
  const std::string cfg = tmp.str("explode.cfg");
  spit(cfg,
       "mode = simulate\nexample = 2\nK = 4\np = 10\nn_first = 20\nn_later = 20\n"
       "n_test = 20\nn_batches = 1\nreplicates = 1\nseed = 1\n"
       "learning_rate = 1e6\nlambda1_grid = 0.01\nlambda2_grid = 0.01\n");
  CHECK(run_cli("--config " + cfg + " --out " + tmp.str("boom")) == 4);
  CHECK(fs::exists(tmp.path / "boom" / "failures.csv"));
}

TEST_CASE("cli runs are deterministic for a fixed seed") {
  TempDir tmp;
  const std::string args =
      "--mode simulate --example 3 --K 4 --p 10 --n-first 25 --n-later 20 "
      "--n-batches 2 --replicates 1 --seed 9 --export-data --out ";
  REQUIRE(run_cli(args + tmp.str("a")) == 0);
  REQUIRE(run_cli(args + tmp.str("b")) == 0);

  const std::vector<std::string> files = {
      "summary.csv", "trace.csv", "coef_b1.csv", "coef_b2.csv",
      "groups_b2.csv", "checkpoints/source_0.state",
      "data/source_1/batch_2.csv"};
  for (const std::string& f : files)
    CHECK(slurp(tmp.str("a/" + f)) == slurp(tmp.str("b/" + f)));
}

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fol/app.hpp"
#include "fol/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated online learning over multisource data streams"};

  std::string config_path;
  app.add_option("--config", config_path,
                 "key=value configuration file, loaded before flag overrides");

  // Every flag override funnels through the same key=value setter as the
  // config file, so both spellings validate identically.
  struct Override {
    const char* flag;
    const char* key;
    const char* help;
    std::string value;
  };
  std::vector<Override> overrides = {
      {"--mode", "mode", "simulate or stream", ""},
      {"--method", "method", "proposed, oracle, ind, or homo", ""},
      {"--example", "example", "simulated design 1, 2, or 3 (also sets the family)", ""},
      {"--family", "family", "gaussian or logistic", ""},
      {"--K", "k", "number of sources", ""},
      {"--p", "p", "covariate dimension", ""},
      {"--n-first", "n_first", "rows per source in the first batch", ""},
      {"--n-later", "n_later", "rows per source in every later batch", ""},
      {"--n-batches", "n_batches", "stream length in batches", ""},
      {"--replicates", "replicates", "independent simulation replicates", ""},
      {"--seed", "seed", "base seed; replicate r runs at seed + r", ""},
      {"--out", "out", "output directory", ""},
      {"--data-dir", "data_dir", "stream-mode input directory (source_<k>/batch_<u>.csv)", ""},
      {"--transport", "transport", "inprocess or socket", ""},
      {"--port", "port", "socket transport port; 0 binds an ephemeral port", ""},
  };
  for (Override& o : overrides) app.add_option(o.flag, o.value, o.help);

  bool export_data = false;
  app.add_flag("--export-data", export_data,
               "also write the simulated batches under <out>/data");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    fol::ExperimentConfig cfg;
    if (!config_path.empty()) cfg = fol::load_config_file(config_path);
    for (const Override& o : overrides)
      if (!o.value.empty()) fol::set_config_key(cfg, o.key, o.value, o.flag);
    if (export_data) fol::set_config_key(cfg, "export_data", "true", "--export-data");
    return fol::run_experiment(cfg);
  } catch (const fol::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const fol::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
}

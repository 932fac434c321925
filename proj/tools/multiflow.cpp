#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "multiflow/config.hpp"
#include "multiflow/csv.hpp"
#include "multiflow/error.hpp"
#include "multiflow/experiments.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

int exit_code_for(const multiflow::Error& e) {
  return multiflow::is_numerical(e.code()) ? kExitNumerical : kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Population gradient flow experiments for multi-index targets"};
  std::string experiment;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string experiments_help;
  for (const auto& [id, name] : multiflow::kExperimentNames) {
    experiments_help += experiments_help.empty() ? "" : ", ";
    experiments_help += name;
  }
  app.add_option("experiment", experiment, "One of: " + experiments_help)->required();
  app.add_option("--config", config_path, "Flat key = value config file")->required();
  app.add_option("--seed", seed, "Master seed (overrides the config)");
  app.add_option("--out", out_dir, "Output directory for CSV files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    const auto id = multiflow::parse_experiment(experiment);
    multiflow::ExperimentConfig cfg = multiflow::load_config(config_path, id);
    if (seed) cfg.seed = *seed;
    const multiflow::ExperimentOutput out = multiflow::run_experiment(cfg);
    const auto echo = cfg.entries();
    for (const auto& table : out.tables) {
      const auto path = multiflow::write_csv_file(out_dir, table, echo);
      std::cout << "wrote " << path.string() << " (" << table.rows.size() << " rows)\n";
    }
    for (const auto& [key, value] : out.summary) std::cout << key << " = " << value << '\n';
    if (out.failure) {
      std::cerr << "error: " << out.failure->what() << '\n';
      return exit_code_for(*out.failure);
    }
    return kExitOk;
  } catch (const multiflow::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
}

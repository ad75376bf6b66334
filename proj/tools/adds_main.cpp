// Command line front end: run experiments from sectioned config files,
// validate configs, and compare metrics CSVs.

#include <cstdio>
#include <exception>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adds/config.hpp"
#include "adds/errors.hpp"
#include "adds/metrics.hpp"

int main(int argc, char** argv) {
  CLI::App app{"adds: multi-party learning simulator with differentiable subnet sampling"};
  app.require_subcommand(1);

  std::string config_path, out_dir, compare_a, compare_b, targets_arg;
  std::uint64_t seed_override = 0;
  int rounds_override = -1;
  bool have_seed = false;

  CLI::App* run = app.add_subcommand("run", "run an experiment from a config file");
  run->add_option("config", config_path, "path to the config file")->required();
  CLI::Option* seed_opt = run->add_option("--seed", seed_override, "override the seed");
  run->add_option("--rounds", rounds_override, "override the round count");
  run->add_option("--out", out_dir, "override the output directory");

  CLI::App* validate = app.add_subcommand("validate", "parse and validate a config file");
  validate->add_option("config", config_path, "path to the config file")->required();

  CLI::App* compare = app.add_subcommand("compare", "compare two metrics CSVs");
  compare->add_option("a", compare_a, "baseline metrics.csv")->required();
  compare->add_option("b", compare_b, "candidate metrics.csv")->required();
  compare->add_option("--targets", targets_arg, "comma-separated accuracy targets");

  CLI11_PARSE(app, argc, argv);
  have_seed = seed_opt->count() > 0;

  try {
    if (run->parsed()) {
      adds::ExperimentConfig cfg = adds::load_config_file(config_path);
      if (have_seed) cfg.seed = seed_override;
      if (rounds_override >= 0) cfg.rounds = rounds_override;
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      adds::run_and_write(cfg);
      std::printf("wrote %s/metrics.csv (%zu rounds)\n", cfg.out_dir.c_str(),
                  static_cast<std::size_t>(cfg.rounds));
      return 0;
    }
    if (validate->parsed()) {
      adds::ExperimentConfig cfg = adds::load_config_file(config_path);
      std::printf("config ok\n%s", adds::serialize_config(cfg).c_str());
      return 0;
    }
    if (compare->parsed()) {
      std::vector<double> targets;
      if (!targets_arg.empty()) {
        std::stringstream ss(targets_arg);
        std::string tok;
        while (std::getline(ss, tok, ',')) targets.push_back(std::stod(tok));
      }
      const adds::MetricsTable a = adds::load_metrics_csv(compare_a);
      const adds::MetricsTable b = adds::load_metrics_csv(compare_b);
      const adds::CompareResult cmp = adds::compare_metrics(a, b, targets);
      std::printf("%s", adds::render_compare(cmp, "a", "b").c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

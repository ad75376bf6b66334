#pragma once

#include <optional>
#include <string>
#include <vector>

#include "adds/config.hpp"
#include "adds/server.hpp"

namespace adds {

// Fixed schema: round, global_acc, global_loss, mean_local_acc,
// std_local_acc, mean_params_ratio, mean_flops_ratio, mean_alpha_l1..lK,
// epsilon, participants. Reals carry 10 significant digits; participant ids
// are ';'-joined inside the one cell.
std::string metrics_csv(const std::vector<RoundReport>& rounds, std::size_t hidden_layers);

struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;            // participants column excluded
  std::vector<std::vector<int>> participants;       // per row
  std::size_t column(const std::string& name) const;  // throws if missing
};

MetricsTable load_metrics_csv(const std::string& path);

struct CompareEntry {
  double final_global_acc = 0.0;
  double final_mean_local_acc = 0.0;
  double final_params_ratio = 1.0;
  double final_flops_ratio = 1.0;
  // Per target: first round whose global accuracy reaches it.
  std::vector<std::optional<int>> rounds_to_target;
};

struct CompareResult {
  std::vector<double> targets;
  CompareEntry a, b;
};

// Throws InvalidInput when the two files disagree on schema.
CompareResult compare_metrics(const MetricsTable& a, const MetricsTable& b,
                              const std::vector<double>& targets);

// Aligned comparison table, Table-style "speedup x" per target.
std::string render_compare(const CompareResult& cmp, const std::string& name_a,
                           const std::string& name_b);

// Executes the experiment and writes metrics.csv, config_used.cfg and
// summary.json under cfg.out_dir. Returns the ExperimentResult.
ExperimentResult run_and_write(const ExperimentConfig& cfg);

}  // namespace adds

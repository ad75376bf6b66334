#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adds/importance.hpp"
#include "adds/sampler.hpp"

namespace adds {

enum class Algorithm { kAdds, kFedAvg, kFedDrop, kCentralized };
enum class LambdaMode { kJsd, kJsdMinMax, kFixed };
enum class DataSource { kBlobs, kCsv };
enum class PartitionScheme { kDirichlet, kShards };

struct ExperimentConfig {
  // [experiment]
  Algorithm algorithm = Algorithm::kAdds;
  std::uint64_t seed = 1;
  int rounds = 200;
  int clients = 10;
  double participation = 0.3;
  int local_epochs = 3;
  int batch_size = 32;
  double lr_weights = 0.05;
  double lr_alpha = 0.01;

  // [model]
  std::vector<int> hidden_layers = {64};

  // [sampling]
  SamplingConfig sampling;
  double alpha_init = 1.0;
  bool freeze_alpha = false;
  LambdaMode lambda_mode = LambdaMode::kJsd;
  double lambda_value = 0.5;  // used when lambda_mode = fixed
  ImportanceMode importance = ImportanceMode::kLrp;
  double feddrop_keep = 0.25;

  // [data]
  DataSource source = DataSource::kBlobs;
  int classes = 10;
  int samples_per_class = 100;
  int features = 16;
  double spread = 1.0;
  std::string csv_path;
  PartitionScheme partition = PartitionScheme::kDirichlet;
  double concentration = 0.5;
  int shards_per_client = 2;
  int min_samples = 20;

  // [output]
  std::string out_dir = "out";

  bool operator==(const ExperimentConfig&) const = default;
};

// Parses sectioned key = value text; '#' starts a comment. Unknown sections
// and keys are rejected, every violation names the offending key.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Canonical text with all defaults materialized; parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

void validate_config(const ExperimentConfig& cfg);

const char* algorithm_name(Algorithm a);

}  // namespace adds

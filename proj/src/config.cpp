#include "adds/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "adds/errors.hpp"

namespace adds {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& what) {
  throw ConfigError(key + ": " + what);
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, "expected integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, "expected unsigned integer, got '" + v + "'");
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(out)) throw std::invalid_argument("bad");
    return out;
  } catch (const std::exception&) {
    bad_value(key, "expected real number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, "expected true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::string cur;
  std::stringstream ss(v);
  while (std::getline(ss, cur, ',')) {
    out.push_back(static_cast<int>(to_int(key, trim(cur))));
  }
  if (out.empty()) bad_value(key, "expected comma-separated integers");
  return out;
}

std::string format_real(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kAdds: return "adds";
    case Algorithm::kFedAvg: return "fedavg";
    case Algorithm::kFedDrop: return "feddrop";
    case Algorithm::kCentralized: return "centralized";
  }
  return "?";
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::string section;
  std::stringstream ss(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(ss, raw)) {
    ++line_no;
    std::string line = trim(raw);
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("line " + std::to_string(line_no) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "experiment" && section != "model" && section != "sampling" &&
          section != "data" && section != "output") {
        throw ConfigError("unknown section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string qual = section.empty() ? key : section + "." + key;

    if (section == "experiment" || section.empty()) {
      if (key == "algorithm") {
        if (value == "adds") cfg.algorithm = Algorithm::kAdds;
        else if (value == "fedavg") cfg.algorithm = Algorithm::kFedAvg;
        else if (value == "feddrop") cfg.algorithm = Algorithm::kFedDrop;
        else if (value == "centralized") cfg.algorithm = Algorithm::kCentralized;
        else bad_value(qual, "must be one of adds|fedavg|feddrop|centralized");
        continue;
      }
      if (key == "seed") { cfg.seed = to_u64(qual, value); continue; }
      if (key == "rounds") { cfg.rounds = static_cast<int>(to_int(qual, value)); continue; }
      if (key == "clients") { cfg.clients = static_cast<int>(to_int(qual, value)); continue; }
      if (key == "participation") { cfg.participation = to_real(qual, value); continue; }
      if (key == "local_epochs") { cfg.local_epochs = static_cast<int>(to_int(qual, value)); continue; }
      if (key == "batch_size") { cfg.batch_size = static_cast<int>(to_int(qual, value)); continue; }
      if (key == "lr_weights") { cfg.lr_weights = to_real(qual, value); continue; }
      if (key == "lr_alpha") { cfg.lr_alpha = to_real(qual, value); continue; }
    }
    if (section == "model") {
      if (key == "hidden") { cfg.hidden_layers = to_int_list(qual, value); continue; }
    }
    if (section == "sampling") {
      if (key == "epsilon_init") { cfg.sampling.epsilon_init = to_real(qual, value); continue; }
      if (key == "epsilon_decay") { cfg.sampling.epsilon_decay = to_real(qual, value); continue; }
      if (key == "alpha_min") { cfg.sampling.alpha_min = to_real(qual, value); continue; }
      if (key == "root_tolerance") { cfg.sampling.root_tolerance = to_real(qual, value); continue; }
      if (key == "alpha_init") { cfg.alpha_init = to_real(qual, value); continue; }
      if (key == "freeze_alpha") { cfg.freeze_alpha = to_bool(qual, value); continue; }
      if (key == "lambda_mode") {
        if (value == "jsd") cfg.lambda_mode = LambdaMode::kJsd;
        else if (value == "jsd_minmax") cfg.lambda_mode = LambdaMode::kJsdMinMax;
        else if (value == "fixed") cfg.lambda_mode = LambdaMode::kFixed;
        else bad_value(qual, "must be one of jsd|jsd_minmax|fixed");
        continue;
      }
      if (key == "lambda_value") { cfg.lambda_value = to_real(qual, value); continue; }
      if (key == "importance") {
        if (value == "slim") cfg.importance = ImportanceMode::kSlim;
        else if (value == "lrp") cfg.importance = ImportanceMode::kLrp;
        else if (value == "fc_activation") cfg.importance = ImportanceMode::kFcActivation;
        else bad_value(qual, "must be one of slim|lrp|fc_activation");
        continue;
      }
      if (key == "feddrop_keep") { cfg.feddrop_keep = to_real(qual, value); continue; }
    }
    if (section == "data") {
      if (key == "source") {
        if (value == "blobs") cfg.source = DataSource::kBlobs;
        else if (value == "csv") cfg.source = DataSource::kCsv;
        else bad_value(qual, "must be blobs|csv");
        continue;
      }
      if (key == "classes") { cfg.classes = static_cast<int>(to_int(qual, value)); continue; }
      if (key == "samples_per_class") { cfg.samples_per_class = static_cast<int>(to_int(qual, value)); continue; }
      if (key == "features") { cfg.features = static_cast<int>(to_int(qual, value)); continue; }
      if (key == "spread") { cfg.spread = to_real(qual, value); continue; }
      if (key == "csv_path") { cfg.csv_path = value; continue; }
      if (key == "partition") {
        if (value == "dirichlet") cfg.partition = PartitionScheme::kDirichlet;
        else if (value == "shards") cfg.partition = PartitionScheme::kShards;
        else bad_value(qual, "must be dirichlet|shards");
        continue;
      }
      if (key == "concentration") { cfg.concentration = to_real(qual, value); continue; }
      if (key == "shards_per_client") { cfg.shards_per_client = static_cast<int>(to_int(qual, value)); continue; }
      if (key == "min_samples") { cfg.min_samples = static_cast<int>(to_int(qual, value)); continue; }
    }
    if (section == "output") {
      if (key == "dir") { cfg.out_dir = value; continue; }
    }
    throw ConfigError("unknown key '" + qual + "'");
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void validate_config(const ExperimentConfig& cfg) {
  if (cfg.rounds < 0) throw ConfigError("rounds must be >= 0 (got " + std::to_string(cfg.rounds) + ")");
  if (cfg.clients < 1) throw ConfigError("clients must be >= 1");
  if (!(cfg.participation > 0.0 && cfg.participation <= 1.0)) {
    throw ConfigError("participation must lie in (0,1] (got " + format_real(cfg.participation) + ")");
  }
  if (cfg.local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(cfg.lr_weights > 0.0)) throw ConfigError("lr_weights must be > 0");
  if (!(cfg.lr_alpha > 0.0)) throw ConfigError("lr_alpha must be > 0");
  if (cfg.hidden_layers.empty()) throw ConfigError("model.hidden must list at least one layer");
  for (int h : cfg.hidden_layers) {
    if (h < 1) throw ConfigError("model.hidden sizes must be >= 1");
  }
  if (!(cfg.sampling.epsilon_init > 0.0)) throw ConfigError("sampling.epsilon_init must be > 0");
  if (!(cfg.sampling.epsilon_decay > 0.0 && cfg.sampling.epsilon_decay <= 1.0)) {
    throw ConfigError("sampling.epsilon_decay must lie in (0,1]");
  }
  if (!(cfg.sampling.alpha_min > 0.0 && cfg.sampling.alpha_min < 1.0)) {
    throw ConfigError("sampling.alpha_min must lie in (0,1)");
  }
  if (!(cfg.sampling.root_tolerance > 0.0)) throw ConfigError("sampling.root_tolerance must be > 0");
  if (!(cfg.alpha_init > 0.0 && cfg.alpha_init <= 1.0)) {
    throw ConfigError("sampling.alpha_init must lie in (0,1]");
  }
  if (cfg.lambda_value < 0.0) throw ConfigError("sampling.lambda_value must be >= 0");
  if (!(cfg.feddrop_keep > 0.0 && cfg.feddrop_keep <= 1.0)) {
    throw ConfigError("sampling.feddrop_keep must lie in (0,1]");
  }
  if (cfg.source == DataSource::kBlobs) {
    if (cfg.classes < 1) throw ConfigError("data.classes must be >= 1");
    if (cfg.samples_per_class < 1) throw ConfigError("data.samples_per_class must be >= 1");
    if (cfg.features < 1) throw ConfigError("data.features must be >= 1");
    if (cfg.spread < 0.0) throw ConfigError("data.spread must be >= 0");
  } else if (cfg.csv_path.empty()) {
    throw ConfigError("data.csv_path required when data.source = csv");
  }
  if (!(cfg.concentration > 0.0)) throw ConfigError("data.concentration must be > 0");
  if (cfg.shards_per_client < 1) throw ConfigError("data.shards_per_client must be >= 1");
  if (cfg.min_samples < 10) throw ConfigError("data.min_samples must be >= 10");
  if (cfg.out_dir.empty()) throw ConfigError("output.dir must not be empty");
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "[experiment]\n";
  out << "algorithm = " << algorithm_name(cfg.algorithm) << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "rounds = " << cfg.rounds << "\n";
  out << "clients = " << cfg.clients << "\n";
  out << "participation = " << format_real(cfg.participation) << "\n";
  out << "local_epochs = " << cfg.local_epochs << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "lr_weights = " << format_real(cfg.lr_weights) << "\n";
  out << "lr_alpha = " << format_real(cfg.lr_alpha) << "\n";
  out << "\n[model]\n";
  out << "hidden = ";
  for (std::size_t i = 0; i < cfg.hidden_layers.size(); ++i) {
    if (i) out << ",";
    out << cfg.hidden_layers[i];
  }
  out << "\n";
  out << "\n[sampling]\n";
  out << "epsilon_init = " << format_real(cfg.sampling.epsilon_init) << "\n";
  out << "epsilon_decay = " << format_real(cfg.sampling.epsilon_decay) << "\n";
  out << "alpha_min = " << format_real(cfg.sampling.alpha_min) << "\n";
  out << "root_tolerance = " << format_real(cfg.sampling.root_tolerance) << "\n";
  out << "alpha_init = " << format_real(cfg.alpha_init) << "\n";
  out << "freeze_alpha = " << (cfg.freeze_alpha ? "true" : "false") << "\n";
  out << "lambda_mode = "
      << (cfg.lambda_mode == LambdaMode::kJsd
              ? "jsd"
              : cfg.lambda_mode == LambdaMode::kJsdMinMax ? "jsd_minmax" : "fixed")
      << "\n";
  out << "lambda_value = " << format_real(cfg.lambda_value) << "\n";
  out << "importance = "
      << (cfg.importance == ImportanceMode::kSlim
              ? "slim"
              : cfg.importance == ImportanceMode::kLrp ? "lrp" : "fc_activation")
      << "\n";
  out << "feddrop_keep = " << format_real(cfg.feddrop_keep) << "\n";
  out << "\n[data]\n";
  out << "source = " << (cfg.source == DataSource::kBlobs ? "blobs" : "csv") << "\n";
  out << "classes = " << cfg.classes << "\n";
  out << "samples_per_class = " << cfg.samples_per_class << "\n";
  out << "features = " << cfg.features << "\n";
  out << "spread = " << format_real(cfg.spread) << "\n";
  if (!cfg.csv_path.empty()) out << "csv_path = " << cfg.csv_path << "\n";
  out << "partition = " << (cfg.partition == PartitionScheme::kDirichlet ? "dirichlet" : "shards") << "\n";
  out << "concentration = " << format_real(cfg.concentration) << "\n";
  out << "shards_per_client = " << cfg.shards_per_client << "\n";
  out << "min_samples = " << cfg.min_samples << "\n";
  out << "\n[output]\n";
  out << "dir = " << cfg.out_dir << "\n";
  return out.str();
}

}  // namespace adds

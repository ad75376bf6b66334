#include "adds/metrics.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "adds/errors.hpp"

namespace adds {

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string metrics_csv(const std::vector<RoundReport>& rounds, std::size_t hidden_layers) {
  std::ostringstream out;
  out << "round,global_acc,global_loss,mean_local_acc,std_local_acc,"
         "mean_params_ratio,mean_flops_ratio";
  for (std::size_t k = 0; k < hidden_layers; ++k) out << ",mean_alpha_l" << (k + 1);
  out << ",epsilon,participants\n";
  for (const RoundReport& r : rounds) {
    out << r.round << "," << fmt(r.global_accuracy) << "," << fmt(r.global_loss) << ","
        << fmt(r.mean_local_accuracy) << "," << fmt(r.std_local_accuracy) << ","
        << fmt(r.mean_params_ratio) << "," << fmt(r.mean_flops_ratio);
    for (std::size_t k = 0; k < hidden_layers; ++k) {
      out << "," << fmt(k < r.mean_alpha.size() ? r.mean_alpha[k] : 1.0);
    }
    out << "," << fmt(r.epsilon) << ",";
    for (std::size_t i = 0; i < r.participants.size(); ++i) {
      if (i) out << ";";
      out << r.participants[i];
    }
    out << "\n";
  }
  return out.str();
}

std::size_t MetricsTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return i;
  }
  throw InvalidInput("metrics column '" + name + "' not found");
}

MetricsTable load_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  MetricsTable table;
  table.columns = split(line, ',');
  if (table.columns.empty() || table.columns.back() != "participants") {
    throw ParseError(path + ": unexpected metrics header");
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != table.columns.size()) {
      throw ParseError(path + ": line " + std::to_string(line_no) + ": expected " +
                       std::to_string(table.columns.size()) + " fields");
    }
    std::vector<double> row;
    for (std::size_t i = 0; i + 1 < fields.size(); ++i) {
      try {
        row.push_back(std::stod(fields[i]));
      } catch (const std::exception&) {
        throw ParseError(path + ": line " + std::to_string(line_no) + ": bad value '" +
                         fields[i] + "'");
      }
    }
    std::vector<int> ids;
    if (!fields.back().empty()) {
      for (const std::string& tok : split(fields.back(), ';')) {
        try {
          ids.push_back(std::stoi(tok));
        } catch (const std::exception&) {
          throw ParseError(path + ": line " + std::to_string(line_no) +
                           ": bad participant id '" + tok + "'");
        }
      }
    }
    table.rows.push_back(std::move(row));
    table.participants.push_back(std::move(ids));
  }
  return table;
}

namespace {

CompareEntry summarize(const MetricsTable& t, const std::vector<double>& targets) {
  CompareEntry e;
  if (t.rows.empty()) {
    e.rounds_to_target.assign(targets.size(), std::nullopt);
    return e;
  }
  const std::size_t acc = t.column("global_acc");
  const std::size_t local = t.column("mean_local_acc");
  const std::size_t params = t.column("mean_params_ratio");
  const std::size_t flops = t.column("mean_flops_ratio");
  const std::size_t round = t.column("round");
  e.final_global_acc = t.rows.back()[acc];
  e.final_mean_local_acc = t.rows.back()[local];
  e.final_params_ratio = t.rows.back()[params];
  e.final_flops_ratio = t.rows.back()[flops];
  for (double target : targets) {
    std::optional<int> hit;
    for (const auto& row : t.rows) {
      if (row[acc] >= target) {
        hit = static_cast<int>(row[round]);
        break;
      }
    }
    e.rounds_to_target.push_back(hit);
  }
  return e;
}

}  // namespace

CompareResult compare_metrics(const MetricsTable& a, const MetricsTable& b,
                              const std::vector<double>& targets) {
  if (a.columns != b.columns) {
    throw InvalidInput("compare: metrics files have different schemas");
  }
  CompareResult cmp;
  cmp.targets = targets;
  cmp.a = summarize(a, targets);
  cmp.b = summarize(b, targets);
  return cmp;
}

std::string render_compare(const CompareResult& cmp, const std::string& name_a,
                           const std::string& name_b) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-24s %12s %12s %10s\n", "metric", name_a.c_str(),
                name_b.c_str(), "delta");
  out << buf;
  const auto row = [&](const char* name, double a, double b) {
    std::snprintf(buf, sizeof buf, "%-24s %12.4f %12.4f %+10.4f\n", name, a, b, b - a);
    out << buf;
  };
  row("final global acc", cmp.a.final_global_acc, cmp.b.final_global_acc);
  row("final mean local acc", cmp.a.final_mean_local_acc, cmp.b.final_mean_local_acc);
  row("final params ratio", cmp.a.final_params_ratio, cmp.b.final_params_ratio);
  row("final flops ratio", cmp.a.final_flops_ratio, cmp.b.final_flops_ratio);
  for (std::size_t i = 0; i < cmp.targets.size(); ++i) {
    const auto& ra = cmp.a.rounds_to_target[i];
    const auto& rb = cmp.b.rounds_to_target[i];
    std::string sa = ra ? std::to_string(*ra) : "not reached";
    std::string sb = rb ? std::to_string(*rb) : "not reached";
    std::string speed = "-";
    if (ra && rb) {
      char sbuf[32];
      std::snprintf(sbuf, sizeof sbuf, "%.2f x", static_cast<double>(*ra) / *rb);
      speed = sbuf;
    }
    std::snprintf(buf, sizeof buf, "rounds to acc >= %-7.4g %12s %12s %10s\n", cmp.targets[i],
                  sa.c_str(), sb.c_str(), speed.c_str());
    out << buf;
  }
  return out.str();
}

ExperimentResult run_and_write(const ExperimentConfig& cfg) {
  validate_config(cfg);
  std::filesystem::create_directories(cfg.out_dir);

  ExperimentResult result = run_experiment(cfg);

  const std::string csv = metrics_csv(result.rounds, cfg.hidden_layers.size());
  {
    std::ofstream out(cfg.out_dir + "/metrics.csv", std::ios::binary);
    if (!out) throw ConfigError("cannot write " + cfg.out_dir + "/metrics.csv");
    out << csv;
  }
  {
    std::ofstream out(cfg.out_dir + "/config_used.cfg", std::ios::binary);
    if (!out) throw ConfigError("cannot write " + cfg.out_dir + "/config_used.cfg");
    out << serialize_config(cfg);
  }
  {
    nlohmann::json summary;
    summary["algorithm"] = algorithm_name(cfg.algorithm);
    summary["seed"] = cfg.seed;
    summary["rounds"] = cfg.rounds;
    summary["clients"] = cfg.clients;
    if (!result.rounds.empty()) {
      const RoundReport& last = result.rounds.back();
      summary["final_global_acc"] = last.global_accuracy;
      summary["final_global_loss"] = last.global_loss;
      summary["final_mean_local_acc"] = last.mean_local_accuracy;
      summary["final_mean_params_ratio"] = last.mean_params_ratio;
      summary["final_mean_flops_ratio"] = last.mean_flops_ratio;
    }
    summary["metrics_csv"] = cfg.out_dir + "/metrics.csv";
    std::ofstream out(cfg.out_dir + "/summary.json", std::ios::binary);
    if (!out) throw ConfigError("cannot write " + cfg.out_dir + "/summary.json");
    out << summary.dump(2) << "\n";
  }
  return result;
}

}  // namespace adds

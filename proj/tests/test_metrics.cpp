#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "adds/errors.hpp"
#include "adds/metrics.hpp"

using namespace adds;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.rounds = 1;
  cfg.clients = 6;
  cfg.classes = 3;
  cfg.samples_per_class = 60;
  cfg.features = 5;
  cfg.hidden_layers = {8};
  cfg.min_samples = 10;
  cfg.out_dir = out_dir;
  return cfg;
}

}  // namespace

TEST_CASE("run writes a csv with one data row per round plus the header") {
  const std::string dir = "metrics_test_out_a";
  run_and_write(small_config(dir));
  const std::string csv = slurp(dir + "/metrics.csv");
  int lines = 0;
  for (char ch : csv) lines += ch == '\n' ? 1 : 0;
  CHECK(lines == 2);  // header + 1 round
  CHECK(csv.rfind("round,global_acc,global_loss,mean_local_acc,std_local_acc,"
                  "mean_params_ratio,mean_flops_ratio,mean_alpha_l1,epsilon,participants",
                  0) == 0);
  CHECK(std::filesystem::exists(dir + "/config_used.cfg"));
  CHECK(std::filesystem::exists(dir + "/summary.json"));

  // The config echo reparses to the exact config that ran.
  ExperimentConfig echoed = load_config_file(dir + "/config_used.cfg");
  CHECK(echoed == small_config(dir));
  std::filesystem::remove_all(dir);
}

TEST_CASE("identical configs produce byte-identical metrics") {
  const std::string da = "metrics_test_out_b1", db = "metrics_test_out_b2";
  ExperimentConfig ca = small_config(da);
  ExperimentConfig cb = small_config(db);
  cb.out_dir = db;
  run_and_write(ca);
  run_and_write(cb);
  CHECK(slurp(da + "/metrics.csv") == slurp(db + "/metrics.csv"));
  std::filesystem::remove_all(da);
  std::filesystem::remove_all(db);
}

TEST_CASE("adds and fedavg emit the same column schema") {
  const std::string da = "metrics_test_out_c1", db = "metrics_test_out_c2";
  ExperimentConfig ca = small_config(da);
  ca.algorithm = Algorithm::kAdds;
  ca.alpha_init = 0.8;
  ExperimentConfig cb = small_config(db);
  cb.algorithm = Algorithm::kFedAvg;
  run_and_write(ca);
  run_and_write(cb);
  MetricsTable ta = load_metrics_csv(da + "/metrics.csv");
  MetricsTable tb = load_metrics_csv(db + "/metrics.csv");
  CHECK(ta.columns == tb.columns);
  CHECK_NOTHROW(compare_metrics(ta, tb, {0.5}));
  std::filesystem::remove_all(da);
  std::filesystem::remove_all(db);
}

TEST_CASE("comparing a file with itself gives zero deltas and unit speedup") {
  std::vector<RoundReport> rounds;
  for (int r = 1; r <= 5; ++r) {
    RoundReport rep;
    rep.round = r;
    rep.global_accuracy = 0.1 * r;
    rep.global_loss = 1.0 / r;
    rep.mean_local_accuracy = 0.1 * r;
    rep.mean_alpha = {1.0};
    rep.participants = {0, 1};
    rounds.push_back(rep);
  }
  const std::string path = "self_metrics.csv";
  {
    std::ofstream out(path, std::ios::binary);
    out << metrics_csv(rounds, 1);
  }
  MetricsTable t = load_metrics_csv(path);
  CompareResult cmp = compare_metrics(t, t, {0.3, 0.9});
  CHECK(cmp.a.final_global_acc == cmp.b.final_global_acc);
  REQUIRE(cmp.a.rounds_to_target[0].has_value());
  CHECK(*cmp.a.rounds_to_target[0] == 3);  // first round with acc >= 0.3
  CHECK(!cmp.a.rounds_to_target[1].has_value());  // 0.9 never reached

  const std::string table = render_compare(cmp, "a", "b");
  CHECK(table.find("1.00 x") != std::string::npos);
  CHECK(table.find("not reached") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("rounds to target finds the constructed crossing point") {
  std::vector<RoundReport> fast, slow;
  for (int r = 1; r <= 10; ++r) {
    RoundReport a;
    a.round = r;
    a.global_accuracy = r >= 4 ? 0.8 : 0.2;
    a.mean_alpha = {1.0};
    fast.push_back(a);
    RoundReport b = a;
    b.global_accuracy = r >= 8 ? 0.8 : 0.2;
    slow.push_back(b);
  }
  const std::string pa = "cross_a.csv", pb = "cross_b.csv";
  {
    std::ofstream oa(pa, std::ios::binary), ob(pb, std::ios::binary);
    oa << metrics_csv(slow, 1);
    ob << metrics_csv(fast, 1);
  }
  CompareResult cmp = compare_metrics(load_metrics_csv(pa), load_metrics_csv(pb), {0.5});
  REQUIRE(cmp.a.rounds_to_target[0].has_value());
  REQUIRE(cmp.b.rounds_to_target[0].has_value());
  CHECK(*cmp.a.rounds_to_target[0] == 8);
  CHECK(*cmp.b.rounds_to_target[0] == 4);
  const std::string table = render_compare(cmp, "slow", "fast");
  CHECK(table.find("2.00 x") != std::string::npos);
  std::remove(pa.c_str());
  std::remove(pb.c_str());
}

TEST_CASE("schema mismatches are rejected") {
  std::vector<RoundReport> rounds(1);
  rounds[0].round = 1;
  rounds[0].mean_alpha = {1.0, 1.0};
  const std::string pa = "schema_a.csv", pb = "schema_b.csv";
  {
    std::ofstream oa(pa, std::ios::binary), ob(pb, std::ios::binary);
    oa << metrics_csv(rounds, 2);
    RoundReport one;
    one.round = 1;
    one.mean_alpha = {1.0};
    ob << metrics_csv({one}, 1);
  }
  CHECK_THROWS_AS(
      compare_metrics(load_metrics_csv(pa), load_metrics_csv(pb), {}), InvalidInput);
  std::remove(pa.c_str());
  std::remove(pb.c_str());
}

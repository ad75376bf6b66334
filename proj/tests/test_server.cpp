#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "adds/errors.hpp"
#include "adds/metrics.hpp"
#include "adds/server.hpp"
#include "test_util.hpp"

using namespace adds;
using testutil::make_test_network;
using testutil::random_mask;

namespace {

// Builds an update whose theta is the supernet shrunk to `mask` with every
// parameter shifted by `offset` (so contributions are distinguishable).
ClientUpdate make_update(const Network& supernet, const UnitMask& mask, int id,
                         double offset, long long n_k) {
  Network shifted = supernet;
  for (auto& layer : shifted.layers) {
    for (double& w : layer.weights.data) w += offset;
    for (double& b : layer.bias) b += offset;
    if (layer.has_norm()) {
      for (double& v : layer.bn_gamma) v += offset;
      for (double& v : layer.bn_beta) v += offset;
      for (double& v : layer.bn_running_mean) v += offset;
      for (double& v : layer.bn_running_var) v += offset;
    }
  }
  ClientUpdate up;
  up.client_id = id;
  up.ok = true;
  up.theta = shrink_network(shifted, mask);
  up.index_map = flatten_mask(mask);
  up.n_k = n_k;
  return up;
}

}  // namespace

TEST_CASE("select_clients samples without replacement, deterministically") {
  std::vector<int> ids(10);
  std::iota(ids.begin(), ids.end(), 0);

  Rng r1(3), r2(3), r3(4);
  auto a = select_clients(ids, 0.3, r1);
  auto b = select_clients(ids, 0.3, r2);
  CHECK(a.size() == 3);
  CHECK(std::set<int>(a.begin(), a.end()).size() == 3);
  CHECK(a == b);
  CHECK(select_clients(ids, 1.0, r3) == ids);
  CHECK_THROWS_AS(select_clients(ids, 0.0, r3), InvalidInput);
  CHECK_THROWS_AS(select_clients(ids, 1.2, r3), InvalidInput);
}

TEST_CASE("indexed aggregation averages contributors and keeps orphans") {
  Network supernet = make_test_network({2, 3, 2}, 5);
  supernet.layers[0].bias[0] = 1.0;

  UnitMask keep0 = full_mask(supernet);
  keep0.per_layer[0] = {1, 0, 0};

  ClientUpdate a = make_update(supernet, keep0, 0, 0.0, 10);
  ClientUpdate b = make_update(supernet, keep0, 1, 0.0, 10);
  a.theta.layers[0].bias[0] = 2.0;
  b.theta.layers[0].bias[0] = 4.0;

  Network merged = indexed_aggregate(supernet, {a, b});
  CHECK(merged.layers[0].bias[0] == 3.0);
  // Units 1 and 2 had no contributor: untouched.
  CHECK(merged.layers[0].bias[1] == supernet.layers[0].bias[1]);
  CHECK(merged.layers[0].bias[2] == supernet.layers[0].bias[2]);
  CHECK(merged.layers[0].bn_gamma[1] == supernet.layers[0].bn_gamma[1]);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(merged.layers[0].weights(i, 1) == supernet.layers[0].weights(i, 1));
    CHECK(merged.layers[1].weights(1, i) == supernet.layers[1].weights(1, i));
  }
}

TEST_CASE("indexed aggregation equals a brute-force per-parameter oracle") {
  Network supernet = make_test_network({4, 8, 3}, 7);
  std::vector<ClientUpdate> updates;
  std::vector<UnitMask> masks;
  for (int id = 0; id < 3; ++id) {
    UnitMask mask = random_mask(supernet, 0.6, 100 + id);
    masks.push_back(mask);
    updates.push_back(make_update(supernet, mask, id, 0.25 * (id + 1), 10));
  }
  Network merged = indexed_aggregate(supernet, updates);

  // Oracle: enumerate contributors for every scalar with explicit loops.
  const auto active = [&](int client, std::size_t layer, std::size_t unit) {
    return masks[client].per_layer[layer][unit] != 0;
  };
  const auto subnet_pos = [&](int client, std::size_t layer, std::size_t unit) {
    std::size_t pos = 0;
    for (std::size_t c = 0; c < unit; ++c) pos += masks[client].per_layer[layer][c];
    return pos;
  };

  for (std::size_t l = 0; l < 2; ++l) {
    const bool is_output = l == 1;
    const std::size_t in = supernet.layers[l].in_size();
    const std::size_t out = supernet.layers[l].out_size();
    for (std::size_t j = 0; j < out; ++j) {
      const bool unit_samplable = !is_output;
      double bias_sum = 0.0;
      int bias_n = 0;
      for (int k = 0; k < 3; ++k) {
        if (unit_samplable && !active(k, l, j)) continue;
        const std::size_t col = unit_samplable ? subnet_pos(k, l, j) : j;
        bias_sum += updates[k].theta.layers[l].bias[col];
        ++bias_n;
      }
      const double expect_bias =
          bias_n > 0 ? bias_sum / bias_n : supernet.layers[l].bias[j];
      CHECK(merged.layers[l].bias[j] == expect_bias);

      for (std::size_t i = 0; i < in; ++i) {
        double sum = 0.0;
        int n = 0;
        for (int k = 0; k < 3; ++k) {
          if (unit_samplable && !active(k, l, j)) continue;
          if (l > 0 && !active(k, l - 1, i)) continue;
          const std::size_t col = unit_samplable ? subnet_pos(k, l, j) : j;
          const std::size_t row = l > 0 ? subnet_pos(k, l - 1, i) : i;
          sum += updates[k].theta.layers[l].weights(row, col);
          ++n;
        }
        const double expect = n > 0 ? sum / n : supernet.layers[l].weights(i, j);
        CHECK(merged.layers[l].weights(i, j) == expect);
      }
    }
  }
}

TEST_CASE("aggregation ignores update order and malformed uploads") {
  Network supernet = make_test_network({3, 6, 2}, 9);
  std::vector<ClientUpdate> updates;
  for (int id = 0; id < 4; ++id) {
    updates.push_back(make_update(supernet, random_mask(supernet, 0.5, 200 + id), id,
                                  0.1 * (id + 1), 5));
  }
  Network a = indexed_aggregate(supernet, updates);
  std::reverse(updates.begin(), updates.end());
  Network b = indexed_aggregate(supernet, updates);
  CHECK(a == b);

  // Corrupt one index map: that update is rejected, the rest aggregate.
  updates[1].index_map.pop_back();
  std::vector<int> rejected;
  Network c = indexed_aggregate(supernet, updates, &rejected);
  REQUIRE(rejected.size() == 1);
  CHECK(rejected[0] == updates[1].client_id);
  std::vector<ClientUpdate> rest;
  for (const auto& u : updates) {
    if (u.client_id != updates[1].client_id) rest.push_back(u);
  }
  CHECK(c == indexed_aggregate(supernet, rest));
}

TEST_CASE("aggregation is idempotent on identical full updates") {
  Network supernet = make_test_network({3, 5, 2}, 11);
  UnitMask full = full_mask(supernet);
  std::vector<ClientUpdate> updates;
  for (int id = 0; id < 4; ++id) updates.push_back(make_update(supernet, full, id, 0.5, 7));
  Network merged = indexed_aggregate(supernet, updates);
  CHECK(merged == updates[0].theta);
  for (const auto& layer : merged.layers) {
    CHECK(all_finite(layer.weights));
  }
}

TEST_CASE("fedavg aggregation weights by sample count") {
  Network supernet = make_test_network({2, 4, 2}, 13);
  UnitMask full = full_mask(supernet);

  ClientUpdate a = make_update(supernet, full, 0, 0.0, 1);
  ClientUpdate b = make_update(supernet, full, 1, 0.0, 3);
  a.theta.layers[0].bias[0] = 0.0;
  b.theta.layers[0].bias[0] = 4.0;
  Network merged = fedavg_aggregate(supernet, {a, b});
  CHECK(merged.layers[0].bias[0] == doctest::Approx(3.0).epsilon(1e-15));

  // A single client is passed through unchanged.
  Network solo = fedavg_aggregate(supernet, {b});
  CHECK(solo == b.theta);

  // Equal counts reduce to the arithmetic mean and match indexed_aggregate
  // bit for bit (power-of-two counts make the scaling exact).
  std::vector<ClientUpdate> equal;
  for (int id = 0; id < 3; ++id) equal.push_back(make_update(supernet, full, id, 0.3 * id, 4));
  CHECK(fedavg_aggregate(supernet, equal) == indexed_aggregate(supernet, equal));

  // Partial masks are refused.
  UnitMask partial = full;
  partial.per_layer[0][1] = 0;
  ClientUpdate bad = make_update(supernet, partial, 2, 0.0, 2);
  CHECK_THROWS_AS(fedavg_aggregate(supernet, {a, bad}), InvalidInput);
}

TEST_CASE("shared drop mask has the requested width and is reproducible") {
  Network supernet = make_test_network({4, 8, 6, 3}, 15);
  Rng r1(1), r2(1);
  UnitMask a = draw_shared_mask(supernet, 0.25, r1);
  UnitMask b = draw_shared_mask(supernet, 0.25, r2);
  CHECK(a == b);
  std::size_t kept0 = 0, kept1 = 0;
  for (auto v : a.per_layer[0]) kept0 += v;
  for (auto v : a.per_layer[1]) kept1 += v;
  CHECK(kept0 == 2);  // ceil(0.25 * 8)
  CHECK(kept1 == 2);  // ceil(0.25 * 6)

  Rng r3(2);
  CHECK(draw_shared_mask(supernet, 1.0, r3) == full_mask(supernet));
}

TEST_CASE("zero rounds returns an empty report and the initial supernet") {
  ExperimentConfig cfg;
  cfg.rounds = 0;
  cfg.clients = 6;
  cfg.classes = 3;
  cfg.samples_per_class = 60;
  cfg.features = 6;
  cfg.hidden_layers = {8};
  cfg.min_samples = 10;
  ExperimentResult r = run_experiment(cfg);
  CHECK(r.rounds.empty());

  Rng init_rng(derive_seed(cfg.seed, seed_tag::kInit));
  Network expected = make_network({6, 8, 3}, init_rng);
  CHECK(r.supernet == expected);
}

TEST_CASE("experiments are deterministic under the config") {
  ExperimentConfig cfg;
  cfg.rounds = 2;
  cfg.clients = 6;
  cfg.classes = 4;
  cfg.samples_per_class = 60;
  cfg.features = 6;
  cfg.hidden_layers = {10};
  cfg.min_samples = 10;
  cfg.alpha_init = 0.8;
  ExperimentResult a = run_experiment(cfg);
  ExperimentResult b = run_experiment(cfg);
  CHECK(metrics_csv(a.rounds, 1) == metrics_csv(b.rounds, 1));
  CHECK(a.supernet == b.supernet);
}

TEST_CASE("adds with frozen alpha reproduces fedavg bit for bit") {
  // Balanced shards give every client 160 samples, hence a 128-sample pool:
  // power-of-two counts make n_k-weighted and equal-weight averaging coincide
  // exactly.
  ExperimentConfig cfg;
  cfg.rounds = 3;
  cfg.clients = 10;
  cfg.classes = 10;
  cfg.samples_per_class = 160;
  cfg.features = 8;
  cfg.hidden_layers = {12};
  cfg.partition = PartitionScheme::kShards;
  cfg.shards_per_client = 2;
  cfg.min_samples = 10;

  ExperimentConfig frozen = cfg;
  frozen.algorithm = Algorithm::kAdds;
  frozen.freeze_alpha = true;
  frozen.alpha_init = 1.0;

  ExperimentConfig fedavg = cfg;
  fedavg.algorithm = Algorithm::kFedAvg;

  ExperimentResult a = run_experiment(frozen);
  ExperimentResult b = run_experiment(fedavg);
  CHECK(metrics_csv(a.rounds, 1) == metrics_csv(b.rounds, 1));
  CHECK(a.supernet == b.supernet);
}

TEST_CASE("feddrop with full keep fraction degenerates to fedavg") {
  // Balanced pools (see above) so the two aggregation weightings coincide.
  ExperimentConfig cfg;
  cfg.rounds = 2;
  cfg.clients = 10;
  cfg.classes = 10;
  cfg.samples_per_class = 160;
  cfg.features = 8;
  cfg.hidden_layers = {12};
  cfg.partition = PartitionScheme::kShards;
  cfg.shards_per_client = 2;
  cfg.min_samples = 10;
  cfg.seed = 5;

  ExperimentConfig drop = cfg;
  drop.algorithm = Algorithm::kFedDrop;
  drop.feddrop_keep = 1.0;
  ExperimentConfig avg = cfg;
  avg.algorithm = Algorithm::kFedAvg;

  ExperimentResult a = run_experiment(drop);
  ExperimentResult b = run_experiment(avg);
  CHECK(metrics_csv(a.rounds, 1) == metrics_csv(b.rounds, 1));
  CHECK(a.supernet == b.supernet);
}

TEST_CASE("feddrop rounds share one mask across clients") {
  ExperimentConfig cfg;
  cfg.algorithm = Algorithm::kFedDrop;
  cfg.rounds = 2;
  cfg.clients = 8;
  cfg.classes = 4;
  cfg.samples_per_class = 80;
  cfg.features = 6;
  cfg.hidden_layers = {12};
  cfg.min_samples = 10;
  cfg.feddrop_keep = 0.5;
  ExperimentResult r = run_experiment(cfg);
  REQUIRE(r.rounds.size() == 2);
  for (const RoundReport& round : r.rounds) {
    CHECK(round.mean_alpha[0] == doctest::Approx(0.5));
    CHECK(round.mean_params_ratio < 1.0);
  }
}

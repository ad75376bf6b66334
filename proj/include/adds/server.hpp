#pragma once

#include <vector>

#include "adds/client.hpp"
#include "adds/config.hpp"
#include "adds/data.hpp"
#include "adds/network.hpp"

namespace adds {

struct RoundReport {
  int round = 0;  // 1-based
  double global_accuracy = 0.0;
  double global_loss = 0.0;
  double mean_local_accuracy = 0.0;
  double std_local_accuracy = 0.0;
  double mean_params_ratio = 1.0;
  double mean_flops_ratio = 1.0;
  std::vector<double> mean_alpha;  // per hidden layer
  double epsilon = 1.0;
  std::vector<int> participants;
};

// Uniform sample without replacement of ceil(fraction * N) ids, ascending.
std::vector<int> select_clients(const std::vector<int>& ids, double fraction, Rng& rng);

// Parameter-level indexed aggregation: a weight contributes iff both endpoint
// units are active in the uploader's index map (input/output units always
// are); unit-owned parameters follow the unit's own bit. Contributions are
// averaged with equal weight; parameters nobody contributed keep their
// previous value. Malformed updates are rejected and reported, the rest
// aggregate. Accumulation order is fixed by ascending client id.
Network indexed_aggregate(const Network& supernet, const std::vector<ClientUpdate>& updates,
                          std::vector<int>* rejected = nullptr);

// Classic sample-count-weighted averaging; requires every index map to be all
// ones and throws InvalidInput otherwise.
Network fedavg_aggregate(const Network& supernet, const std::vector<ClientUpdate>& updates);

// One random mask shared by every client in a round (random-drop baseline).
UnitMask draw_shared_mask(const Network& net, double keep_fraction, Rng& rng);

struct ExperimentResult {
  std::vector<RoundReport> rounds;
  Network supernet;
  std::vector<int> train_clients, eval_clients;
  std::vector<double> client_jsd;           // indexed by train client id
  std::vector<double> client_params_ratio;  // last uploaded ratio, -1 if never
  std::vector<double> client_local_acc;     // accuracy at last participation, -1 if never
};

// Full simulation: build data and clients, then per round anneal epsilon,
// select participants, run local rounds on an immutable snapshot, aggregate,
// and evaluate. Deterministic under cfg.seed.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace adds

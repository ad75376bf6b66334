#pragma once

#include <string>
#include <utility>
#include <vector>

#include "adds/config.hpp"
#include "adds/data.hpp"
#include "adds/network.hpp"
#include "adds/sampler.hpp"

namespace adds {

// One participant. The pool is re-split 90/10 into train/validation every
// round; the test indices stay fixed and feed the local accuracy metric.
struct ClientState {
  int client_id = -1;
  const Dataset* data = nullptr;
  std::vector<int> pool;
  std::vector<int> test_indices;
  std::vector<double> label_histogram;
  double lambda = 0.5;
  double jsd_to_uniform = 0.0;
  SparsenessVector sparseness;
};

struct ClientMetrics {
  double local_loss = 0.0;
  double local_accuracy = 0.0;
  long long params = 0;
  long long flops = 0;
  double params_ratio = 1.0;
  double flops_ratio = 1.0;
  std::vector<double> alpha;  // per hidden layer, as reported

  bool operator==(const ClientMetrics&) const = default;
};

// Unit of client -> server communication: the subnet parameters plus the
// index map locating them in the supernet.
struct ClientUpdate {
  int client_id = -1;
  bool ok = false;
  std::string diagnostic;
  Network theta;                        // shrunk to the uploaded subnet
  std::vector<std::uint8_t> index_map;  // length = samplable unit count
  long long n_k = 0;                    // local sample count
  ClientMetrics metrics;
  std::vector<double> alpha_after;  // persisted back into ClientState
  std::vector<double> beta_after;

  bool operator==(const ClientUpdate&) const = default;
};

struct LocalRoundOptions {
  bool freeze_alpha = false;            // baselines never train the architecture
  const UnitMask* forced_mask = nullptr;  // shared mask for the random-drop baseline
};

// 90/10 train/validation split of the local pool, re-drawn per round.
// Throws InvalidInput below 10 samples.
std::pair<std::vector<int>, std::vector<int>> split_local_data(
    const std::vector<int>& pool, Rng& rng);

// lambda = base-2 JSD(histogram, uniform) + 0.5, so lambda lies in [0.5, 1.5].
double lambda_from_jsd(const std::vector<double>& label_histogram);

// One communication round on this client: per epoch, refresh importance,
// solve the per-layer shift, draw a subnet, take one architecture step on a
// validation minibatch, then a full epoch of weight SGD on the train split.
// Finally hardens the architecture (top-n per layer) and packages the subnet.
// Pure function of its arguments; the supernet snapshot is never mutated.
ClientUpdate local_round(const Network& supernet, const ClientState& state, int round,
                         const ExperimentConfig& cfg, const LocalRoundOptions& opts = {});

}  // namespace adds

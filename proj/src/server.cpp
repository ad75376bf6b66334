#include "adds/server.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "adds/errors.hpp"

namespace adds {

namespace {

int log_verbosity() {
  static const int level = [] {
    const char* env = std::getenv("ADDS_LOG");
    if (!env) return 1;
    const std::string v(env);
    if (v == "quiet") return 0;
    if (v == "debug") return 2;
    return 1;
  }();
  return level;
}

struct PreparedUpdate {
  const ClientUpdate* update = nullptr;
  double weight = 1.0;
  UnitMask mask;
  // Supernet unit -> position inside the shrunk subnet, -1 when absent.
  std::vector<std::vector<int>> position;
};

// Validates one update against the supernet shape; returns false to reject.
bool prepare_update(const Network& supernet, const ClientUpdate& up, double weight,
                    PreparedUpdate& out) {
  if (!up.ok) return false;
  if (up.index_map.size() != samplable_unit_count(supernet.layer_sizes)) return false;
  UnitMask mask;
  try {
    mask = unflatten_mask(up.index_map, supernet.layer_sizes);
  } catch (const InvalidInput&) {
    return false;
  }
  const std::size_t hidden = supernet.hidden_layer_count();
  if (up.theta.layers.size() != supernet.layers.size()) return false;
  if (up.theta.input_size() != supernet.input_size()) return false;
  if (up.theta.output_size() != supernet.output_size()) return false;

  out.position.assign(hidden, {});
  for (std::size_t k = 0; k < hidden; ++k) {
    const auto& bits = mask.per_layer[k];
    out.position[k].assign(bits.size(), -1);
    int pos = 0;
    for (std::size_t c = 0; c < bits.size(); ++c) {
      if (bits[c] > 1) return false;
      if (bits[c]) out.position[k][c] = pos++;
    }
    if (pos == 0) return false;
    if (up.theta.layer_sizes[k + 1] != static_cast<std::size_t>(pos)) return false;
  }
  out.update = &up;
  out.weight = weight;
  out.mask = std::move(mask);
  return true;
}

// Shared weighted-average kernel behind both aggregation rules.
Network aggregate(const Network& supernet, const std::vector<PreparedUpdate>& entries) {
  Network out = supernet;
  const std::size_t hidden = supernet.hidden_layer_count();
  for (std::size_t l = 0; l < supernet.layers.size(); ++l) {
    const bool is_output = (l == supernet.layers.size() - 1);
    const std::size_t in = supernet.layers[l].in_size();
    const std::size_t outw = supernet.layers[l].out_size();
    DenseLayer& dst = out.layers[l];

    for (std::size_t j = 0; j < outw; ++j) {
      // Unit-owned parameters: bias plus the normalization quadruple.
      double wsum = 0.0;
      double bias_acc = 0.0, gamma_acc = 0.0, beta_acc = 0.0, rm_acc = 0.0, rv_acc = 0.0;
      for (const PreparedUpdate& e : entries) {
        const int pos = is_output ? static_cast<int>(j) : e.position[l][j];
        if (pos < 0) continue;
        const DenseLayer& src = e.update->theta.layers[l];
        wsum += e.weight;
        bias_acc += e.weight * src.bias[pos];
        if (!is_output) {
          gamma_acc += e.weight * src.bn_gamma[pos];
          beta_acc += e.weight * src.bn_beta[pos];
          rm_acc += e.weight * src.bn_running_mean[pos];
          rv_acc += e.weight * src.bn_running_var[pos];
        }
      }
      if (wsum > 0.0) {
        dst.bias[j] = bias_acc / wsum;
        if (!is_output) {
          dst.bn_gamma[j] = gamma_acc / wsum;
          dst.bn_beta[j] = beta_acc / wsum;
          dst.bn_running_mean[j] = rm_acc / wsum;
          dst.bn_running_var[j] = rv_acc / wsum;
        }
      }

      // Weights into unit j: need the source endpoint active too.
      for (std::size_t i = 0; i < in; ++i) {
        double acc = 0.0, w = 0.0;
        for (const PreparedUpdate& e : entries) {
          const int col = is_output ? static_cast<int>(j) : e.position[l][j];
          if (col < 0) continue;
          const int row = l == 0 ? static_cast<int>(i) : e.position[l - 1][i];
          if (row < 0) continue;
          acc += e.weight * e.update->theta.layers[l].weights(
                                static_cast<std::size_t>(row), static_cast<std::size_t>(col));
          w += e.weight;
        }
        if (w > 0.0) dst.weights(i, j) = acc / w;
      }
    }
    (void)hidden;
  }
  return out;
}

std::vector<const ClientUpdate*> sorted_by_id(const std::vector<ClientUpdate>& updates) {
  std::vector<const ClientUpdate*> ptrs;
  ptrs.reserve(updates.size());
  for (const ClientUpdate& u : updates) ptrs.push_back(&u);
  std::sort(ptrs.begin(), ptrs.end(),
            [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });
  return ptrs;
}

}  // namespace

std::vector<int> select_clients(const std::vector<int>& ids, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidInput("select_clients: fraction must lie in (0,1]");
  }
  if (ids.empty()) throw InvalidInput("select_clients: no ids");
  const double want = fraction * static_cast<double>(ids.size());
  std::size_t n = static_cast<std::size_t>(std::ceil(want - 1e-9 * std::max(1.0, want)));
  n = std::clamp<std::size_t>(n, 1, ids.size());
  std::vector<int> pool = ids;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

Network indexed_aggregate(const Network& supernet, const std::vector<ClientUpdate>& updates,
                          std::vector<int>* rejected) {
  std::vector<PreparedUpdate> entries;
  for (const ClientUpdate* up : sorted_by_id(updates)) {
    PreparedUpdate e;
    if (prepare_update(supernet, *up, 1.0, e)) {
      entries.push_back(std::move(e));
    } else if (rejected) {
      rejected->push_back(up->client_id);
    }
  }
  return aggregate(supernet, entries);
}

Network fedavg_aggregate(const Network& supernet, const std::vector<ClientUpdate>& updates) {
  long long min_n = 0;
  for (const ClientUpdate& up : updates) {
    if (up.n_k <= 0) throw InvalidInput("fedavg_aggregate: nonpositive sample count");
    min_n = min_n == 0 ? up.n_k : std::min(min_n, up.n_k);
  }
  std::vector<PreparedUpdate> entries;
  for (const ClientUpdate* up : sorted_by_id(updates)) {
    for (std::uint8_t bit : up->index_map) {
      if (bit != 1) {
        throw InvalidInput("fedavg_aggregate: client " + std::to_string(up->client_id) +
                           " uploaded a partial index map; use indexed_aggregate");
      }
    }
    // Weights normalized by the smallest count: the weighted mean is scale
    // invariant, and equal counts then reduce to exactly 1.0 so a lone client
    // (or uniform cohort) passes through bit for bit.
    PreparedUpdate e;
    if (!prepare_update(supernet, *up,
                        static_cast<double>(up->n_k) / static_cast<double>(min_n), e)) {
      throw InvalidInput("fedavg_aggregate: malformed update from client " +
                         std::to_string(up->client_id));
    }
    entries.push_back(std::move(e));
  }
  return aggregate(supernet, entries);
}

UnitMask draw_shared_mask(const Network& net, double keep_fraction, Rng& rng) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw InvalidInput("draw_shared_mask: keep fraction must lie in (0,1]");
  }
  UnitMask mask = full_mask(net);
  for (auto& layer : mask.per_layer) {
    const std::size_t c = layer.size();
    const double want = keep_fraction * static_cast<double>(c);
    std::size_t n = static_cast<std::size_t>(std::ceil(want - 1e-9 * std::max(1.0, want)));
    n = std::clamp<std::size_t>(n, 1, c);
    if (n == c) continue;
    std::vector<std::size_t> units(c);
    for (std::size_t i = 0; i < c; ++i) units[i] = i;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(units.size() - i));
      std::swap(units[i], units[j]);
    }
    std::fill(layer.begin(), layer.end(), 0);
    for (std::size_t i = 0; i < n; ++i) layer[units[i]] = 1;
  }
  return mask;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  validate_config(cfg);

  // Data.
  Rng data_rng(derive_seed(cfg.seed, seed_tag::kData));
  Dataset data = cfg.source == DataSource::kBlobs
                     ? make_blobs(cfg.classes, cfg.samples_per_class, cfg.features,
                                  cfg.spread, data_rng)
                     : load_csv_dataset(cfg.csv_path);
  standardize_features(data);

  Rng part_rng(derive_seed(cfg.seed, seed_tag::kPartition));
  const Partition part =
      cfg.partition == PartitionScheme::kDirichlet
          ? dirichlet_partition(data, cfg.clients, cfg.concentration, cfg.min_samples, part_rng)
          : shards_partition(data, cfg.clients, cfg.shards_per_client, cfg.min_samples, part_rng);

  // 80% of clients train, the rest hold out data for the global metric.
  int eval_count = cfg.clients >= 2
                       ? std::max(1, static_cast<int>(std::llround(0.2 * cfg.clients)))
                       : 0;
  const int train_count = cfg.clients - eval_count;

  ExperimentResult result;
  for (int id = 0; id < train_count; ++id) result.train_clients.push_back(id);
  for (int id = train_count; id < cfg.clients; ++id) result.eval_clients.push_back(id);

  // Client states: fixed 80/20 pool/test split of the local data.
  std::vector<ClientState> states(train_count);
  for (int id = 0; id < train_count; ++id) {
    ClientState& st = states[id];
    st.client_id = id;
    st.data = &data;
    std::vector<int> idx = part.client_indices[id];
    Rng setup_rng(derive_seed(cfg.seed, seed_tag::kClientSetup, static_cast<std::uint64_t>(id)));
    shuffle(idx, setup_rng);
    const std::size_t test_count =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.2 * idx.size())));
    st.test_indices.assign(idx.begin(), idx.begin() + test_count);
    st.pool.assign(idx.begin() + test_count, idx.end());
    std::sort(st.test_indices.begin(), st.test_indices.end());
    std::sort(st.pool.begin(), st.pool.end());
    st.label_histogram = part.label_histograms[id];
    st.jsd_to_uniform = part.client_jsd[id];
    const std::size_t hidden = cfg.hidden_layers.size();
    st.sparseness.alpha.assign(hidden, cfg.alpha_init);
    st.sparseness.beta.assign(hidden, 0.0);
    st.sparseness.epsilon = cfg.sampling.epsilon_init;
    result.client_jsd.push_back(st.jsd_to_uniform);
  }
  result.client_params_ratio.assign(train_count, -1.0);
  result.client_local_acc.assign(train_count, -1.0);

  // Client-specific regularizer weights.
  if (cfg.lambda_mode == LambdaMode::kFixed) {
    for (auto& st : states) st.lambda = cfg.lambda_value;
  } else if (cfg.lambda_mode == LambdaMode::kJsd) {
    for (auto& st : states) st.lambda = lambda_from_jsd(st.label_histogram);
  } else {
    double lo = 1e300, hi = -1e300;
    for (auto& st : states) {
      lo = std::min(lo, st.jsd_to_uniform);
      hi = std::max(hi, st.jsd_to_uniform);
    }
    const double span = hi - lo;
    for (auto& st : states) {
      st.lambda = (span > 1e-12 ? (st.jsd_to_uniform - lo) / span : 0.0) + 0.5;
    }
  }

  // The supernet.
  std::vector<std::size_t> sizes;
  sizes.push_back(data.dims());
  for (int h : cfg.hidden_layers) sizes.push_back(static_cast<std::size_t>(h));
  sizes.push_back(static_cast<std::size_t>(data.num_classes));
  Rng init_rng(derive_seed(cfg.seed, seed_tag::kInit));
  Network supernet = make_network(sizes, init_rng);

  // Pooled evaluation data for the global metric; falls back to the train
  // clients' test splits when there is no held-out client.
  std::vector<int> eval_indices;
  for (int id : result.eval_clients) {
    eval_indices.insert(eval_indices.end(), part.client_indices[id].begin(),
                        part.client_indices[id].end());
  }
  if (eval_indices.empty()) {
    for (const auto& st : states) {
      eval_indices.insert(eval_indices.end(), st.test_indices.begin(), st.test_indices.end());
    }
  }
  const Batch eval_batch = make_batch(data, eval_indices);

  // Gathered pool for the centralized baseline.
  std::vector<int> central_pool;
  if (cfg.algorithm == Algorithm::kCentralized) {
    for (const auto& st : states) {
      central_pool.insert(central_pool.end(), st.pool.begin(), st.pool.end());
    }
  }

  const UnitMask full = full_mask(supernet);
  const std::size_t hidden = cfg.hidden_layers.size();

  for (int round = 1; round <= cfg.rounds; ++round) {
    RoundReport report;
    report.round = round;
    report.epsilon = anneal(cfg.sampling, round - 1);
    report.mean_alpha.assign(hidden, 0.0);

    std::vector<ClientUpdate> updates;
    if (cfg.algorithm == Algorithm::kCentralized) {
      Rng central_rng(derive_seed(cfg.seed, seed_tag::kCentral, static_cast<std::uint64_t>(round)));
      for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
        std::vector<int> order = central_pool;
        shuffle(order, central_rng);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
          const std::size_t end =
              std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
          const std::vector<int> chunk(order.begin() + start, order.begin() + end);
          const LossGrads lg = loss_and_grads(supernet, full, make_batch(data, chunk));
          sgd_step(supernet, lg.layers, cfg.lr_weights);
        }
      }
      // Local view of the shared model.
      std::vector<double> accs;
      for (const auto& st : states) {
        const EvalResult ev = evaluate(supernet, full, make_batch(data, st.test_indices));
        accs.push_back(ev.accuracy);
      }
      double mean = 0.0;
      for (double a : accs) mean += a;
      mean /= accs.empty() ? 1.0 : static_cast<double>(accs.size());
      double var = 0.0;
      for (double a : accs) var += (a - mean) * (a - mean);
      var /= accs.empty() ? 1.0 : static_cast<double>(accs.size());
      report.mean_local_accuracy = mean;
      report.std_local_accuracy = std::sqrt(var);
      report.mean_alpha.assign(hidden, 1.0);
    } else {
      Rng select_rng(derive_seed(cfg.seed, seed_tag::kSelect, static_cast<std::uint64_t>(round)));
      report.participants = select_clients(result.train_clients, cfg.participation, select_rng);

      UnitMask shared_mask;
      LocalRoundOptions opts;
      opts.freeze_alpha = cfg.freeze_alpha || cfg.algorithm != Algorithm::kAdds;
      if (cfg.algorithm == Algorithm::kFedDrop) {
        Rng mask_rng(derive_seed(cfg.seed, seed_tag::kSharedMask, static_cast<std::uint64_t>(round)));
        shared_mask = draw_shared_mask(supernet, cfg.feddrop_keep, mask_rng);
        opts.forced_mask = &shared_mask;
      }

      for (int id : report.participants) {
        ClientUpdate up = local_round(supernet, states[id], round, cfg, opts);
        if (up.ok) {
          states[id].sparseness.alpha = up.alpha_after;
          states[id].sparseness.beta = up.beta_after;
          states[id].sparseness.epsilon = report.epsilon;
          result.client_params_ratio[id] = up.metrics.params_ratio;
          result.client_local_acc[id] = up.metrics.local_accuracy;
          updates.push_back(std::move(up));
        } else if (log_verbosity() >= 1) {
          std::fprintf(stderr, "[round %d] client %d skipped: %s\n", round, up.client_id,
                       up.diagnostic.c_str());
        }
      }

      if (!updates.empty()) {
        if (cfg.algorithm == Algorithm::kFedAvg) {
          supernet = fedavg_aggregate(supernet, updates);
        } else {
          std::vector<int> rejected;
          supernet = indexed_aggregate(supernet, updates, &rejected);
          for (int id : rejected) {
            if (log_verbosity() >= 1) {
              std::fprintf(stderr, "[round %d] update from client %d rejected\n", round, id);
            }
          }
        }
      }

      // Local statistics over the successful participants.
      if (!updates.empty()) {
        double mean = 0.0, mp = 0.0, mf = 0.0;
        for (const auto& u : updates) {
          mean += u.metrics.local_accuracy;
          mp += u.metrics.params_ratio;
          mf += u.metrics.flops_ratio;
          for (std::size_t k = 0; k < hidden; ++k) report.mean_alpha[k] += u.metrics.alpha[k];
        }
        const double denom = static_cast<double>(updates.size());
        mean /= denom;
        mp /= denom;
        mf /= denom;
        for (std::size_t k = 0; k < hidden; ++k) report.mean_alpha[k] /= denom;
        double var = 0.0;
        for (const auto& u : updates) {
          var += (u.metrics.local_accuracy - mean) * (u.metrics.local_accuracy - mean);
        }
        var /= denom;
        report.mean_local_accuracy = mean;
        report.std_local_accuracy = std::sqrt(var);
        report.mean_params_ratio = mp;
        report.mean_flops_ratio = mf;
      } else {
        report.mean_alpha.assign(hidden, 1.0);
      }
    }

    const EvalResult global = evaluate(supernet, full, eval_batch);
    report.global_accuracy = global.accuracy;
    report.global_loss = global.loss;
    result.rounds.push_back(std::move(report));

    if (log_verbosity() >= 1) {
      std::fprintf(stderr, "round %d/%d: global acc %.4f loss %.4f params %.3f\n", round,
                   cfg.rounds, result.rounds.back().global_accuracy,
                   result.rounds.back().global_loss, result.rounds.back().mean_params_ratio);
    }
  }

  result.supernet = std::move(supernet);
  return result;
}

}  // namespace adds

#include "adds/client.hpp"

#include <algorithm>
#include <cmath>

#include "adds/errors.hpp"
#include "adds/importance.hpp"

namespace adds {

namespace {

// Below this, a layer is treated as fully kept and sampling is skipped; the
// shift equation has no root at alpha = 1.
constexpr double kFullAlpha = 1.0 - 1e-9;

Batch draw_minibatch(const Dataset& data, const std::vector<int>& indices,
                     std::size_t batch_size, Rng& rng) {
  std::vector<int> idx = indices;
  shuffle(idx, rng);
  if (idx.size() > batch_size) idx.resize(batch_size);
  return make_batch(data, idx);
}

}  // namespace

std::pair<std::vector<int>, std::vector<int>> split_local_data(
    const std::vector<int>& pool, Rng& rng) {
  if (pool.size() < 10) {
    throw InvalidInput("split_local_data: need at least 10 samples, got " +
                       std::to_string(pool.size()));
  }
  std::vector<int> idx = pool;
  shuffle(idx, rng);
  const std::size_t val_count =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.1 * idx.size())));
  std::vector<int> val(idx.begin(), idx.begin() + val_count);
  std::vector<int> train(idx.begin() + val_count, idx.end());
  return {std::move(train), std::move(val)};
}

double lambda_from_jsd(const std::vector<double>& label_histogram) {
  const std::vector<double> uniform(label_histogram.size(),
                                    1.0 / label_histogram.size());
  return jsd(label_histogram, uniform) + 0.5;
}

ClientUpdate local_round(const Network& supernet, const ClientState& state, int round,
                         const ExperimentConfig& cfg, const LocalRoundOptions& opts) {
  ClientUpdate up;
  up.client_id = state.client_id;
  up.n_k = static_cast<long long>(state.pool.size());
  if (state.data == nullptr) {
    up.diagnostic = "client has no dataset";
    return up;
  }
  if (state.pool.size() < 10) {
    up.diagnostic = "too few samples (" + std::to_string(state.pool.size()) +
                    " < 10), client skipped";
    return up;
  }

  Rng rng(derive_seed(cfg.seed, seed_tag::kClientRound,
                      static_cast<std::uint64_t>(state.client_id),
                      static_cast<std::uint64_t>(round)));
  auto [train_idx, val_idx] = split_local_data(state.pool, rng);

  Network net = supernet;
  const std::size_t hidden = net.hidden_layer_count();
  const UnitMask full = full_mask(net);

  std::vector<double> alpha = state.sparseness.alpha;
  std::vector<double> beta = state.sparseness.beta;
  if (alpha.size() != hidden) alpha.assign(hidden, cfg.alpha_init);
  if (beta.size() != hidden) beta.assign(hidden, 0.0);
  const double eps = anneal(cfg.sampling, round > 0 ? round - 1 : 0);

  ImportanceVector importance;

  // Data-driven criteria score units on the round's train split: the split is
  // large enough to keep the ranking stable, which matters because sampling
  // feeds back into which units get trained.
  const auto refresh_importance = [&] {
    Batch batch;
    if (cfg.importance != ImportanceMode::kSlim) {
      batch = make_batch(*state.data, train_idx);
    }
    importance = compute_importance(cfg.importance, net, full, batch);
  };

  // Early rounds explore with diffuse draws; once the temperature has
  // annealed into the saturating regime the draws concentrate on the top-n
  // units anyway, so the tail epochs train the hardened architecture.
  const int consolidation_epochs =
      cfg.local_epochs > 1 ? (eps < 0.5 ? std::min(2, cfg.local_epochs - 1) : 1) : 0;

  try {
    for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
      // Sample this epoch's subnet. Consolidation epochs train the hardened
      // architecture instead of a fresh draw, so the subnet that gets
      // uploaded has been trained as a unit.
      const bool final_epoch = epoch >= cfg.local_epochs - consolidation_epochs;
      UnitMask mask = full;
      std::vector<std::vector<double>> probs(hidden);
      std::vector<bool> sampled(hidden, false);
      if (opts.forced_mask != nullptr) {
        mask = *opts.forced_mask;
      } else {
        bool any_sampling = false;
        for (double a : alpha) any_sampling = any_sampling || a < kFullAlpha;
        if (any_sampling) {
          refresh_importance();
          for (std::size_t k = 0; k < hidden; ++k) {
            if (alpha[k] >= kFullAlpha) continue;
            beta[k] = solve_shift(importance.per_layer[k], alpha[k], eps,
                                  cfg.sampling.root_tolerance);
            probs[k] = sampling_probs(importance.per_layer[k], beta[k], eps);
            mask.per_layer[k] = final_epoch ? harden(importance.per_layer[k], alpha[k])
                                            : sample_mask(probs[k], rng);
            sampled[k] = true;
          }
        }
      }

      // Architecture step on a validation minibatch: straight-through
      // gradients through the drawn mask, differentiated under eval-mode
      // normalization so the step sees the loss of the subnet as deployed,
      // then the regularizer pull. Eval mode also keeps validation data out
      // of the running statistics.
      if (!opts.freeze_alpha && opts.forced_mask == nullptr) {
        const Batch val_batch = draw_minibatch(
            *state.data, val_idx, static_cast<std::size_t>(cfg.batch_size), rng);
        const LossGrads lg = loss_and_grads(net, mask, val_batch, ForwardMode::kEval);
        if (!std::isfinite(lg.loss)) throw NumericError("non-finite validation loss");
        for (std::size_t k = 0; k < hidden; ++k) {
          const double data_term =
              sampled[k] ? sparseness_grad(lg.unit_grads[k], probs[k]).value : 0.0;
          const double grad = data_term + 2.0 * state.lambda * alpha[k];
          alpha[k] = std::clamp(alpha[k] - cfg.lr_alpha * grad,
                                cfg.sampling.alpha_min, 1.0);
          if (sampled[k] && alpha[k] < kFullAlpha) {
            beta[k] = solve_shift(importance.per_layer[k], alpha[k], eps,
                                  cfg.sampling.root_tolerance);
          }
        }
      }

      // Weight epoch over the train split. Exploration epochs redraw the
      // subnet at every minibatch from the epoch's probabilities; the final
      // epoch keeps the hardened architecture fixed.
      std::vector<int> order = train_idx;
      shuffle(order, rng);
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end =
            std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        const std::vector<int> chunk(order.begin() + start, order.begin() + end);
        const Batch batch = make_batch(*state.data, chunk);
        if (!final_epoch && start > 0) {
          for (std::size_t k = 0; k < hidden; ++k) {
            if (sampled[k]) mask.per_layer[k] = sample_mask(probs[k], rng);
          }
        }
        const LossGrads lg = loss_and_grads(net, mask, batch);
        if (!std::isfinite(lg.loss)) throw NumericError("non-finite training loss");
        sgd_step(net, lg.layers, cfg.lr_weights);
      }
    }

    // Derive the final architecture from the trained network's importance.
    UnitMask final_mask = full;
    if (opts.forced_mask != nullptr) {
      final_mask = *opts.forced_mask;
    } else {
      bool any_sampling = false;
      for (double a : alpha) any_sampling = any_sampling || a < kFullAlpha;
      if (any_sampling) {
        refresh_importance();
        for (std::size_t k = 0; k < hidden; ++k) {
          if (alpha[k] < kFullAlpha) {
            final_mask.per_layer[k] = harden(importance.per_layer[k], alpha[k]);
          }
        }
      }
    }

    up.theta = shrink_network(net, final_mask);
    up.index_map = flatten_mask(final_mask);
    up.alpha_after = alpha;
    up.beta_after = beta;

    ClientMetrics& m = up.metrics;
    if (!state.test_indices.empty()) {
      const EvalResult ev = evaluate(net, final_mask, make_batch(*state.data, state.test_indices));
      m.local_loss = ev.loss;
      m.local_accuracy = ev.accuracy;
    }
    const CountResult counted = masked_counts(net, final_mask);
    const CountResult total = masked_counts(net, full);
    m.params = counted.params;
    m.flops = counted.flops;
    m.params_ratio = static_cast<double>(counted.params) / static_cast<double>(total.params);
    m.flops_ratio = static_cast<double>(counted.flops) / static_cast<double>(total.flops);
    m.alpha.resize(hidden);
    for (std::size_t k = 0; k < hidden; ++k) {
      if (opts.forced_mask != nullptr) {
        double active = 0;
        for (std::uint8_t v : final_mask.per_layer[k]) active += v;
        m.alpha[k] = active / static_cast<double>(final_mask.per_layer[k].size());
      } else {
        m.alpha[k] = alpha[k];
      }
    }
    up.ok = true;
  } catch (const NumericError& e) {
    up.ok = false;
    up.diagnostic = std::string("round aborted: ") + e.what();
  }
  return up;
}

}  // namespace adds

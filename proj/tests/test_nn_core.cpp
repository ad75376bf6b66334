#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adds/errors.hpp"
#include "adds/network.hpp"
#include "test_util.hpp"

using namespace adds;
using testutil::fd_unit_grad;
using testutil::fd_weight_grads;
using testutil::make_test_network;
using testutil::random_batch;
using testutil::random_mask;
using testutil::rel_err;

TEST_CASE("zero-weight network yields zero logits and uniform softmax") {
  Rng rng(1);
  Network net = make_network({4, 8, 3}, rng);
  for (auto& layer : net.layers) {
    std::fill(layer.weights.data.begin(), layer.weights.data.end(), 0.0);
  }
  Batch batch = random_batch(6, 4, 3, 2);
  Matrix logits = forward(net, full_mask(net), batch, ForwardMode::kEval);
  for (double v : logits.data) CHECK(v == 0.0);
  Matrix probs = softmax_rows(logits);
  for (double p : probs.data) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(cross_entropy(logits, batch.labels) == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("masking a unit equals zeroing its incoming and outgoing weights") {
  Network net = make_test_network({3, 4, 2}, 7);
  Batch batch = random_batch(5, 3, 2, 8);

  UnitMask mask = full_mask(net);
  mask.per_layer[0][1] = 0;

  Network deleted = net;
  for (std::size_t i = 0; i < 3; ++i) deleted.layers[0].weights(i, 1) = 0.0;
  deleted.layers[0].bias[1] = 0.0;
  for (std::size_t j = 0; j < 2; ++j) deleted.layers[1].weights(1, j) = 0.0;

  Matrix masked = forward_eval(net, mask, batch);
  Matrix cut = forward_eval(deleted, full_mask(deleted), batch);
  // With zero incoming weights the unit still emits relu(bn_beta), so only
  // the zeroed outgoing row matters; both routes must agree exactly.
  for (std::size_t i = 0; i < masked.data.size(); ++i) {
    CHECK(masked.data[i] == doctest::Approx(cut.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("fixed 4-8-3 forward matches an independent matrix-chain oracle") {
  Network net = make_test_network({4, 8, 3}, 42);
  Batch batch = random_batch(1, 4, 3, 43);

  Matrix logits = forward_eval(net, full_mask(net), batch);

  // Oracle: explicit loops over the declared forward convention.
  std::vector<double> h(8, 0.0);
  for (std::size_t c = 0; c < 8; ++c) {
    double z = net.layers[0].bias[c];
    for (std::size_t i = 0; i < 4; ++i) z += batch.inputs(0, i) * net.layers[0].weights(i, c);
    const double xhat = (z - net.layers[0].bn_running_mean[c]) /
                        std::sqrt(net.layers[0].bn_running_var[c] + 1e-5);
    const double y = net.layers[0].bn_gamma[c] * xhat + net.layers[0].bn_beta[c];
    h[c] = y > 0.0 ? y : 0.0;
  }
  for (std::size_t c = 0; c < 3; ++c) {
    double z = net.layers[1].bias[c];
    for (std::size_t i = 0; i < 8; ++i) z += h[i] * net.layers[1].weights(i, c);
    CHECK(std::fabs(logits(0, c) - z) < 1e-12);
  }
}

TEST_CASE("saturated softmax: margins above 20 give vanishing loss and grads") {
  Rng rng(3);
  Network net = make_network({4, 3}, rng);
  for (auto& layer : net.layers) {
    std::fill(layer.weights.data.begin(), layer.weights.data.end(), 0.0);
  }
  net.layers[0].bias = {25.0, 0.0, 0.0};
  Batch batch = random_batch(6, 4, 3, 4);
  std::fill(batch.labels.begin(), batch.labels.end(), 0);

  LossGrads lg = loss_and_grads(net, full_mask(net), batch);
  CHECK(lg.loss < 1e-6);
  for (const auto& layer : lg.layers) {
    for (double g : layer.weights.data) CHECK(std::fabs(g) < 1e-6);
    for (double g : layer.bias) CHECK(std::fabs(g) < 1e-6);
  }
}

TEST_CASE("weight gradients match central finite differences") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    Network net = make_test_network({4, 8, 8, 3}, seed);
    Batch batch = random_batch(5, 4, 3, seed + 100);
    UnitMask mask = seed == 12 ? random_mask(net, 0.7, seed + 200) : full_mask(net);
    GateVector gates = to_gates(mask);

    Network work = net;
    LossGrads lg = loss_and_grads(work, gates, batch);
    auto fd = fd_weight_grads(net, gates, batch, 1e-5);

    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      for (std::size_t i = 0; i < lg.layers[l].weights.data.size(); ++i) {
        CHECK(rel_err(lg.layers[l].weights.data[i], fd[l].weights.data[i]) < 1e-4);
      }
      for (std::size_t c = 0; c < lg.layers[l].bias.size(); ++c) {
        CHECK(rel_err(lg.layers[l].bias[c], fd[l].bias[c]) < 1e-4);
      }
      for (std::size_t c = 0; c < lg.layers[l].bn_gamma.size(); ++c) {
        CHECK(rel_err(lg.layers[l].bn_gamma[c], fd[l].bn_gamma[c]) < 1e-4);
        CHECK(rel_err(lg.layers[l].bn_beta[c], fd[l].bn_beta[c]) < 1e-4);
      }
    }
  }
}

TEST_CASE("masked parameters receive exactly zero gradient") {
  Network net = make_test_network({4, 6, 3}, 21);
  Batch batch = random_batch(5, 4, 3, 22);
  UnitMask mask = full_mask(net);
  mask.per_layer[0][2] = 0;
  mask.per_layer[0][4] = 0;

  Network work = net;
  LossGrads lg = loss_and_grads(work, mask, batch);
  for (std::size_t c : {2u, 4u}) {
    for (std::size_t i = 0; i < 4; ++i) CHECK(lg.layers[0].weights(i, c) == 0.0);
    CHECK(lg.layers[0].bias[c] == 0.0);
    CHECK(lg.layers[0].bn_gamma[c] == 0.0);
    CHECK(lg.layers[0].bn_beta[c] == 0.0);
    for (std::size_t j = 0; j < 3; ++j) CHECK(lg.layers[1].weights(c, j) == 0.0);
  }
}

TEST_CASE("unit gradients match finite differences on the gate") {
  for (std::uint64_t seed : {31u, 32u}) {
    Network net = make_test_network({4, 8, 8, 3}, seed);
    Batch batch = random_batch(6, 4, 3, seed + 50);
    UnitMask mask = random_mask(net, 0.6, seed + 60);
    GateVector gates = to_gates(mask);

    Network work = net;
    LossGrads lg = loss_and_grads(work, gates, batch);
    for (std::size_t k = 0; k < 2; ++k) {
      for (std::size_t c = 0; c < 8; ++c) {
        const double fd = fd_unit_grad(net, gates, batch, k, c, 1e-4);
        CHECK(rel_err(lg.unit_grads[k][c], fd) < 1e-3);
      }
    }
  }
}

TEST_CASE("masked_counts arithmetic on a 4-8-3 network") {
  Rng rng(5);
  Network net = make_network({4, 8, 3}, rng);
  UnitMask full = full_mask(net);
  CountResult all = masked_counts(net, full);
  CHECK(all.params == 99);  // (4*8 + 8 + 4*8) + (8*3 + 3)
  CHECK(all.flops == 2 * 4 * 8 + 2 * 8 + 2 * 8 * 3);

  UnitMask half = full;
  for (std::size_t c = 4; c < 8; ++c) half.per_layer[0][c] = 0;
  CountResult kept = masked_counts(net, half);
  CHECK(kept.params == 51);  // (4*4 + 4 + 16) + (4*3 + 3)

  // Monotonicity: the full mask dominates any mask.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    UnitMask m = random_mask(net, 0.5, seed);
    CountResult c = masked_counts(net, m);
    CHECK(c.params <= all.params);
    CHECK(c.flops <= all.flops);
    if (m == full) CHECK(c.params == all.params);
  }
}

TEST_CASE("masking equivalence: gating equals physical deletion") {
  Network net = make_test_network({5, 7, 6, 4}, 61);
  Batch batch = random_batch(6, 5, 4, 62);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    UnitMask mask = random_mask(net, 0.6, 70 + seed);
    Network shrunk = shrink_network(net, mask);

    Matrix a = forward_eval(net, mask, batch);
    Matrix b = forward_eval(shrunk, full_mask(shrunk), batch);
    REQUIRE(a.data.size() == b.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) {
      CHECK(std::fabs(a.data[i] - b.data[i]) < 1e-12);
    }

    // Train mode too: batch statistics of surviving units are unaffected.
    Network n1 = net, n2 = shrunk;
    Matrix ta = forward(n1, mask, batch, ForwardMode::kTrain);
    Matrix tb = forward(n2, full_mask(shrunk), batch, ForwardMode::kTrain);
    for (std::size_t i = 0; i < ta.data.size(); ++i) {
      CHECK(std::fabs(ta.data[i] - tb.data[i]) < 1e-12);
    }
  }
}

TEST_CASE("eval forward is pure and deterministic") {
  Network net = make_test_network({4, 6, 3}, 81);
  const Network before = net;
  Batch batch = random_batch(4, 4, 3, 82);
  Matrix a = forward_eval(net, full_mask(net), batch);
  Matrix b = forward_eval(net, full_mask(net), batch);
  CHECK(a == b);
  CHECK(net == before);
}

TEST_CASE("train forward updates running statistics by EMA") {
  Rng rng(91);
  Network net = make_network({3, 4, 2}, rng);
  Batch batch = random_batch(8, 3, 2, 92);
  ActivationCache cache;
  forward(net, full_mask(net), batch, ForwardMode::kTrain, &cache);
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(net.layers[0].bn_running_mean[c] ==
          doctest::Approx(0.1 * cache.mean[0][c]).epsilon(1e-12));
    CHECK(net.layers[0].bn_running_var[c] ==
          doctest::Approx(0.9 + 0.1 * cache.var[0][c]).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy bounds") {
  Matrix uniform(5, 4, 0.0);
  std::vector<int> labels = {0, 1, 2, 3, 0};
  CHECK(cross_entropy(uniform, labels) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  Rng rng(101);
  for (int t = 0; t < 20; ++t) {
    Matrix logits(3, 4);
    for (double& v : logits.data) v = 4.0 * rng.uniform() - 2.0;
    std::vector<int> y = {static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4)),
                          static_cast<int>(rng.below(4))};
    CHECK(cross_entropy(logits, y) >= 0.0);
  }
}

TEST_CASE("invalid inputs are rejected") {
  Network net = make_test_network({4, 6, 3}, 111);
  Batch batch = random_batch(4, 4, 3, 112);

  Batch narrow = batch;
  narrow.inputs = Matrix(4, 3, 0.0);
  CHECK_THROWS_AS(forward_eval(net, full_mask(net), narrow), InvalidInput);

  UnitMask dead = full_mask(net);
  std::fill(dead.per_layer[0].begin(), dead.per_layer[0].end(), 0);
  CHECK_THROWS_AS(forward_eval(net, dead, batch), InvalidInput);

  Batch bad_label = batch;
  bad_label.labels[0] = 3;
  Network work = net;
  CHECK_THROWS_AS(loss_and_grads(work, full_mask(net), bad_label), InvalidInput);

  Network poisoned = net;
  poisoned.layers[0].weights(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(forward_eval(poisoned, full_mask(net), batch), NumericError);

  Batch empty;
  empty.inputs = Matrix(0, 4, 0.0);
  CHECK_THROWS_AS(forward_eval(net, full_mask(net), empty), InvalidInput);
}

TEST_CASE("index map flattening round-trips") {
  Network net = make_test_network({4, 6, 5, 3}, 121);
  CHECK(samplable_unit_count(net.layer_sizes) == 11);
  UnitMask mask = random_mask(net, 0.5, 122);
  auto flat = flatten_mask(mask);
  CHECK(flat.size() == 11);
  CHECK(unflatten_mask(flat, net.layer_sizes) == mask);
}

#pragma once

#include <cstdint>
#include <vector>

#include "adds/matrix.hpp"
#include "adds/rng.hpp"

namespace adds {

struct DenseLayer {
  Matrix weights;  // in x out
  std::vector<double> bias;
  // Per-unit normalization parameters; empty on the output layer.
  std::vector<double> bn_gamma;
  std::vector<double> bn_beta;
  std::vector<double> bn_running_mean;
  std::vector<double> bn_running_var;

  bool has_norm() const { return !bn_gamma.empty(); }
  std::size_t in_size() const { return weights.rows; }
  std::size_t out_size() const { return weights.cols; }

  bool operator==(const DenseLayer&) const = default;
};

// Dense feedforward net. Hidden layers run Dense -> BatchNorm -> ReLU and are
// gated per unit after the nonlinearity; the final layer emits raw logits.
struct Network {
  std::vector<std::size_t> layer_sizes;  // [d0, d1, ..., dK, d_out]
  std::vector<DenseLayer> layers;        // layer i maps d_i -> d_{i+1}

  std::size_t hidden_layer_count() const {
    return layers.empty() ? 0 : layers.size() - 1;
  }
  std::size_t input_size() const { return layer_sizes.front(); }
  std::size_t output_size() const { return layer_sizes.back(); }

  bool operator==(const Network&) const = default;
};

// He-uniform weights, zero biases, gamma = 1, running var = 1.
Network make_network(const std::vector<std::size_t>& layer_sizes, Rng& rng);

// Binary keep/drop over hidden units. Input features and output units are
// always kept; every hidden layer must keep at least one unit.
struct UnitMask {
  std::vector<std::vector<std::uint8_t>> per_layer;

  bool operator==(const UnitMask&) const = default;
};

// Continuous relaxation of a UnitMask; used by the straight-through gradient
// checks and the soft-loss path.
struct GateVector {
  std::vector<std::vector<double>> per_layer;
};

UnitMask full_mask(const Network& net);
GateVector to_gates(const UnitMask& mask);

// Index map encoding: hidden-layer masks concatenated in layer order.
std::vector<std::uint8_t> flatten_mask(const UnitMask& mask);
UnitMask unflatten_mask(const std::vector<std::uint8_t>& flat,
                        const std::vector<std::size_t>& layer_sizes);
std::size_t samplable_unit_count(const std::vector<std::size_t>& layer_sizes);

struct Batch {
  Matrix inputs;            // n x d0
  std::vector<int> labels;  // class ids in [0, d_out)

  std::size_t size() const { return inputs.rows; }
};

enum class ForwardMode { kTrain, kEval };

// Everything backward and relevance propagation need from a forward pass.
struct ActivationCache {
  Matrix input;
  std::vector<Matrix> pre_activation;  // z, per hidden layer
  std::vector<Matrix> normalized;      // x_hat
  std::vector<Matrix> rectified;       // relu(gamma * x_hat + beta)
  std::vector<Matrix> activation;      // gate * rectified
  std::vector<std::vector<double>> mean, var, inv_std;  // statistics used
  Matrix logits;
};

// Train mode normalizes with batch statistics and updates the running
// statistics of `net` (momentum 0.9); eval mode uses the running statistics
// and leaves the network untouched.
Matrix forward(Network& net, const GateVector& gates, const Batch& batch,
               ForwardMode mode, ActivationCache* cache = nullptr);
Matrix forward(Network& net, const UnitMask& mask, const Batch& batch,
               ForwardMode mode, ActivationCache* cache = nullptr);

// Pure eval-mode forward.
Matrix forward_eval(const Network& net, const GateVector& gates,
                    const Batch& batch, ActivationCache* cache = nullptr);
Matrix forward_eval(const Network& net, const UnitMask& mask, const Batch& batch,
                    ActivationCache* cache = nullptr);

Matrix softmax_rows(const Matrix& logits);

// Mean softmax cross-entropy.
double cross_entropy(const Matrix& logits, const std::vector<int>& labels);

struct LayerGrads {
  Matrix weights;
  std::vector<double> bias, bn_gamma, bn_beta;
};

struct LossGrads {
  double loss = 0.0;
  std::vector<LayerGrads> layers;
  // dL/d(gate), per hidden layer: the straight-through gradient that the
  // sampler reads as dL/dp.
  std::vector<std::vector<double>> unit_grads;
};

// Forward + full manual backward. Train mode normalizes with batch
// statistics (and updates the running statistics); eval mode differentiates
// the deployed network, holding the running statistics fixed. Gradients of
// masked-out parameters are exactly zero under a binary mask.
LossGrads loss_and_grads(Network& net, const GateVector& gates, const Batch& batch,
                         ForwardMode mode = ForwardMode::kTrain);
LossGrads loss_and_grads(Network& net, const UnitMask& mask, const Batch& batch,
                         ForwardMode mode = ForwardMode::kTrain);

// Loss without side effects; train mode runs on an internal copy.
double batch_loss(const Network& net, const GateVector& gates, const Batch& batch,
                  ForwardMode mode);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Eval-mode loss and top-1 accuracy.
EvalResult evaluate(const Network& net, const UnitMask& mask, const Batch& batch);

void sgd_step(Network& net, const std::vector<LayerGrads>& grads, double lr);

struct CountResult {
  long long params = 0;
  long long flops = 0;
};

// A weight counts iff both endpoint units are active; bias and the four
// normalization scalars of a unit count iff the unit is active.
// flops = sum 2*in_active*out_active per layer, + 2*out_active per
// normalized layer.
CountResult masked_counts(const Network& net, const UnitMask& mask);

// Physically delete masked units: forward(shrunk, full) == forward(net, mask).
Network shrink_network(const Network& net, const UnitMask& mask);

}  // namespace adds

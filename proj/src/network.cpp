#include "adds/network.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adds/errors.hpp"

namespace adds {

namespace {

constexpr double kBnEpsilon = 1e-5;
constexpr double kBnMomentum = 0.9;

void validate_sizes(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 2) throw InvalidInput("network needs at least input and output sizes");
  for (std::size_t s : sizes) {
    if (s == 0) throw InvalidInput("layer sizes must be >= 1");
  }
}

void validate_gates(const Network& net, const GateVector& gates) {
  const std::size_t hidden = net.hidden_layer_count();
  if (gates.per_layer.size() != hidden) {
    throw InvalidInput("gate vector covers " + std::to_string(gates.per_layer.size()) +
                       " layers, network has " + std::to_string(hidden) + " hidden layers");
  }
  for (std::size_t k = 0; k < hidden; ++k) {
    if (gates.per_layer[k].size() != net.layer_sizes[k + 1]) {
      throw InvalidInput("gate vector length mismatch on hidden layer " + std::to_string(k));
    }
  }
}

void validate_mask(const Network& net, const UnitMask& mask) {
  const std::size_t hidden = net.hidden_layer_count();
  if (mask.per_layer.size() != hidden) {
    throw InvalidInput("mask covers " + std::to_string(mask.per_layer.size()) +
                       " layers, network has " + std::to_string(hidden) + " hidden layers");
  }
  for (std::size_t k = 0; k < hidden; ++k) {
    if (mask.per_layer[k].size() != net.layer_sizes[k + 1]) {
      throw InvalidInput("mask length mismatch on hidden layer " + std::to_string(k));
    }
    std::size_t active = 0;
    for (std::uint8_t v : mask.per_layer[k]) {
      if (v > 1) throw InvalidInput("mask entries must be 0 or 1");
      active += v;
    }
    if (active == 0) {
      throw InvalidInput("hidden layer " + std::to_string(k) + " has no active unit");
    }
  }
}

void validate_batch(const Network& net, const Batch& batch) {
  if (batch.size() == 0) throw InvalidInput("empty batch");
  if (batch.inputs.cols != net.input_size()) {
    throw InvalidInput("batch feature width " + std::to_string(batch.inputs.cols) +
                       " does not match network input size " +
                       std::to_string(net.input_size()));
  }
}

void validate_labels(const Network& net, const Batch& batch) {
  if (batch.labels.size() != batch.size()) {
    throw InvalidInput("label count does not match batch size");
  }
  for (int y : batch.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= net.output_size()) {
      throw InvalidInput("label " + std::to_string(y) + " out of range");
    }
  }
}

// Shared forward; batch_stats selects train-style normalization. Never
// mutates the network: train callers commit the cached statistics afterwards.
void forward_impl(const Network& net, const GateVector& gates, const Batch& batch,
                  bool batch_stats, ActivationCache& cache) {
  validate_batch(net, batch);
  validate_gates(net, gates);

  const std::size_t n = batch.size();
  const std::size_t hidden = net.hidden_layer_count();
  cache.input = batch.inputs;
  cache.pre_activation.assign(hidden, Matrix());
  cache.normalized.assign(hidden, Matrix());
  cache.rectified.assign(hidden, Matrix());
  cache.activation.assign(hidden, Matrix());
  cache.mean.assign(hidden, {});
  cache.var.assign(hidden, {});
  cache.inv_std.assign(hidden, {});

  const Matrix* x = &cache.input;
  for (std::size_t l = 0; l < hidden; ++l) {
    const DenseLayer& layer = net.layers[l];
    const std::size_t out = layer.out_size();
    Matrix z = matmul(*x, layer.weights);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < out; ++c) z(i, c) += layer.bias[c];
    }
    if (!all_finite(z)) throw NumericError("non-finite values in forward pass");

    std::vector<double> mean(out, 0.0), var(out, 0.0), inv_std(out, 0.0);
    if (batch_stats) {
      for (std::size_t c = 0; c < out; ++c) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += z(i, c);
        m /= static_cast<double>(n);
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = z(i, c) - m;
          v += d * d;
        }
        v /= static_cast<double>(n);
        mean[c] = m;
        var[c] = v;
      }
    } else {
      mean = layer.bn_running_mean;
      var = layer.bn_running_var;
    }
    for (std::size_t c = 0; c < out; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + kBnEpsilon);

    Matrix xhat(n, out), rect(n, out), act(n, out);
    const std::vector<double>& g = gates.per_layer[l];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < out; ++c) {
        const double xh = (z(i, c) - mean[c]) * inv_std[c];
        const double y = layer.bn_gamma[c] * xh + layer.bn_beta[c];
        const double r = y > 0.0 ? y : 0.0;
        xhat(i, c) = xh;
        rect(i, c) = r;
        act(i, c) = g[c] * r;
      }
    }

    cache.pre_activation[l] = std::move(z);
    cache.normalized[l] = std::move(xhat);
    cache.rectified[l] = std::move(rect);
    cache.activation[l] = std::move(act);
    cache.mean[l] = std::move(mean);
    cache.var[l] = std::move(var);
    cache.inv_std[l] = std::move(inv_std);
    x = &cache.activation[l];
  }

  const DenseLayer& out_layer = net.layers.back();
  Matrix logits = matmul(*x, out_layer.weights);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < out_layer.out_size(); ++c) logits(i, c) += out_layer.bias[c];
  }
  if (!all_finite(logits)) throw NumericError("non-finite values in forward pass");
  cache.logits = std::move(logits);
}

void commit_running_stats(Network& net, const ActivationCache& cache) {
  for (std::size_t l = 0; l < net.hidden_layer_count(); ++l) {
    DenseLayer& layer = net.layers[l];
    for (std::size_t c = 0; c < layer.out_size(); ++c) {
      layer.bn_running_mean[c] =
          kBnMomentum * layer.bn_running_mean[c] + (1.0 - kBnMomentum) * cache.mean[l][c];
      layer.bn_running_var[c] =
          kBnMomentum * layer.bn_running_var[c] + (1.0 - kBnMomentum) * cache.var[l][c];
    }
  }
}

}  // namespace

Network make_network(const std::vector<std::size_t>& layer_sizes, Rng& rng) {
  validate_sizes(layer_sizes);
  Network net;
  net.layer_sizes = layer_sizes;
  const std::size_t num_layers = layer_sizes.size() - 1;
  net.layers.resize(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::size_t in = layer_sizes[l];
    const std::size_t out = layer_sizes[l + 1];
    DenseLayer& layer = net.layers[l];
    layer.weights = Matrix(in, out);
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    for (double& w : layer.weights.data) w = (2.0 * rng.uniform() - 1.0) * limit;
    layer.bias.assign(out, 0.0);
    // Hidden layers carry normalization; the output layer does not.
    if (l + 1 < num_layers) {
      layer.bn_gamma.assign(out, 1.0);
      layer.bn_beta.assign(out, 0.0);
      layer.bn_running_mean.assign(out, 0.0);
      layer.bn_running_var.assign(out, 1.0);
    }
  }
  return net;
}

UnitMask full_mask(const Network& net) {
  UnitMask mask;
  mask.per_layer.resize(net.hidden_layer_count());
  for (std::size_t k = 0; k < mask.per_layer.size(); ++k) {
    mask.per_layer[k].assign(net.layer_sizes[k + 1], 1);
  }
  return mask;
}

GateVector to_gates(const UnitMask& mask) {
  GateVector g;
  g.per_layer.resize(mask.per_layer.size());
  for (std::size_t k = 0; k < mask.per_layer.size(); ++k) {
    g.per_layer[k].assign(mask.per_layer[k].begin(), mask.per_layer[k].end());
  }
  return g;
}

std::vector<std::uint8_t> flatten_mask(const UnitMask& mask) {
  std::vector<std::uint8_t> flat;
  for (const auto& layer : mask.per_layer) flat.insert(flat.end(), layer.begin(), layer.end());
  return flat;
}

UnitMask unflatten_mask(const std::vector<std::uint8_t>& flat,
                        const std::vector<std::size_t>& layer_sizes) {
  validate_sizes(layer_sizes);
  if (flat.size() != samplable_unit_count(layer_sizes)) {
    throw InvalidInput("index map length " + std::to_string(flat.size()) +
                       " does not match samplable unit count " +
                       std::to_string(samplable_unit_count(layer_sizes)));
  }
  UnitMask mask;
  std::size_t pos = 0;
  for (std::size_t k = 1; k + 1 < layer_sizes.size(); ++k) {
    mask.per_layer.emplace_back(flat.begin() + pos, flat.begin() + pos + layer_sizes[k]);
    pos += layer_sizes[k];
  }
  return mask;
}

std::size_t samplable_unit_count(const std::vector<std::size_t>& layer_sizes) {
  std::size_t total = 0;
  for (std::size_t k = 1; k + 1 < layer_sizes.size(); ++k) total += layer_sizes[k];
  return total;
}

Matrix forward(Network& net, const GateVector& gates, const Batch& batch,
               ForwardMode mode, ActivationCache* cache) {
  ActivationCache local;
  ActivationCache& c = cache ? *cache : local;
  forward_impl(net, gates, batch, mode == ForwardMode::kTrain, c);
  if (mode == ForwardMode::kTrain) commit_running_stats(net, c);
  return c.logits;
}

Matrix forward(Network& net, const UnitMask& mask, const Batch& batch,
               ForwardMode mode, ActivationCache* cache) {
  validate_mask(net, mask);
  return forward(net, to_gates(mask), batch, mode, cache);
}

Matrix forward_eval(const Network& net, const GateVector& gates, const Batch& batch,
                    ActivationCache* cache) {
  ActivationCache local;
  ActivationCache& c = cache ? *cache : local;
  forward_impl(net, gates, batch, false, c);
  return c.logits;
}

Matrix forward_eval(const Network& net, const UnitMask& mask, const Batch& batch,
                    ActivationCache* cache) {
  validate_mask(net, mask);
  return forward_eval(net, to_gates(mask), batch, cache);
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    double m = logits(i, 0);
    for (std::size_t c = 1; c < logits.cols; ++c) m = std::max(m, logits(i, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      probs(i, c) = std::exp(logits(i, c) - m);
      sum += probs(i, c);
    }
    for (std::size_t c = 0; c < logits.cols; ++c) probs(i, c) /= sum;
  }
  return probs;
}

double cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  if (labels.size() != logits.rows) throw InvalidInput("label count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    double m = logits(i, 0);
    for (std::size_t c = 1; c < logits.cols; ++c) m = std::max(m, logits(i, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) sum += std::exp(logits(i, c) - m);
    total += m + std::log(sum) - logits(i, labels[i]);
  }
  const double loss = total / static_cast<double>(logits.rows);
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");
  return loss;
}

LossGrads loss_and_grads(Network& net, const GateVector& gates, const Batch& batch,
                         ForwardMode mode) {
  const bool batch_stats = mode == ForwardMode::kTrain;
  validate_labels(net, batch);
  ActivationCache cache;
  forward_impl(net, gates, batch, batch_stats, cache);
  if (batch_stats) commit_running_stats(net, cache);

  const std::size_t n = batch.size();
  const std::size_t hidden = net.hidden_layer_count();

  LossGrads out;
  out.loss = cross_entropy(cache.logits, batch.labels);
  out.layers.resize(net.layers.size());
  out.unit_grads.resize(hidden);

  // dL/dlogits = (softmax - onehot) / n
  Matrix dlogits = softmax_rows(cache.logits);
  for (std::size_t i = 0; i < n; ++i) {
    dlogits(i, batch.labels[i]) -= 1.0;
    for (std::size_t c = 0; c < dlogits.cols; ++c) dlogits(i, c) /= static_cast<double>(n);
  }

  // Output layer.
  const Matrix& last_act = hidden > 0 ? cache.activation[hidden - 1] : cache.input;
  {
    const DenseLayer& layer = net.layers.back();
    LayerGrads& g = out.layers.back();
    g.weights = Matrix(layer.in_size(), layer.out_size(), 0.0);
    g.bias.assign(layer.out_size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < layer.out_size(); ++c) {
        const double d = dlogits(i, c);
        g.bias[c] += d;
        for (std::size_t u = 0; u < layer.in_size(); ++u) g.weights(u, c) += last_act(i, u) * d;
      }
    }
  }

  // dL/d(activation of last hidden layer).
  Matrix dact;
  if (hidden > 0) {
    const DenseLayer& layer = net.layers.back();
    dact = Matrix(n, layer.in_size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < layer.out_size(); ++c) {
        const double d = dlogits(i, c);
        if (d == 0.0) continue;
        for (std::size_t u = 0; u < layer.in_size(); ++u) dact(i, u) += d * layer.weights(u, c);
      }
    }
  }

  for (std::size_t l = hidden; l-- > 0;) {
    const DenseLayer& layer = net.layers[l];
    const std::size_t outw = layer.out_size();
    const std::vector<double>& g = gates.per_layer[l];
    const Matrix& rect = cache.rectified[l];
    const Matrix& xhat = cache.normalized[l];
    const Matrix& z = cache.pre_activation[l];
    const Matrix& x_in = l == 0 ? cache.input : cache.activation[l - 1];

    LayerGrads& lg = out.layers[l];
    lg.weights = Matrix(layer.in_size(), outw, 0.0);
    lg.bias.assign(outw, 0.0);
    lg.bn_gamma.assign(outw, 0.0);
    lg.bn_beta.assign(outw, 0.0);

    std::vector<double>& ug = out.unit_grads[l];
    ug.assign(outw, 0.0);

    // Through gate and ReLU, then batch normalization.
    Matrix dz(n, outw, 0.0);
    for (std::size_t c = 0; c < outw; ++c) {
      double sum_dxhat = 0.0, sum_dxhat_zc = 0.0, dgamma = 0.0, dbeta = 0.0, ugc = 0.0;
      const double inv_std = cache.inv_std[l][c];
      const double mean = cache.mean[l][c];
      for (std::size_t i = 0; i < n; ++i) {
        const double da = dact(i, c);
        ugc += da * rect(i, c);
        const double dy = rect(i, c) > 0.0 ? da * g[c] : 0.0;
        dgamma += dy * xhat(i, c);
        dbeta += dy;
        const double dxhat = dy * layer.bn_gamma[c];
        sum_dxhat += dxhat;
        sum_dxhat_zc += dxhat * (z(i, c) - mean);
      }
      ug[c] = ugc;
      lg.bn_gamma[c] = dgamma;
      lg.bn_beta[c] = dbeta;
      // The mean/variance terms exist only when the statistics came from this
      // batch; under running statistics the normalization is an affine map.
      const double dvar =
          batch_stats ? sum_dxhat_zc * (-0.5) * inv_std * inv_std * inv_std : 0.0;
      const double dmean = batch_stats ? -inv_std * sum_dxhat : 0.0;
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double da = dact(i, c);
        const double dy = rect(i, c) > 0.0 ? da * g[c] : 0.0;
        const double dxhat = dy * layer.bn_gamma[c];
        dz(i, c) = dxhat * inv_std + dvar * 2.0 * (z(i, c) - mean) * inv_n + dmean * inv_n;
      }
    }

    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < outw; ++c) {
        const double d = dz(i, c);
        if (d == 0.0) continue;
        lg.bias[c] += d;
        for (std::size_t u = 0; u < layer.in_size(); ++u) lg.weights(u, c) += x_in(i, u) * d;
      }
    }

    if (l > 0) {
      Matrix dprev(n, layer.in_size(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < outw; ++c) {
          const double d = dz(i, c);
          if (d == 0.0) continue;
          for (std::size_t u = 0; u < layer.in_size(); ++u) dprev(i, u) += d * layer.weights(u, c);
        }
      }
      dact = std::move(dprev);
    }
  }

  return out;
}

LossGrads loss_and_grads(Network& net, const UnitMask& mask, const Batch& batch,
                         ForwardMode mode) {
  validate_mask(net, mask);
  return loss_and_grads(net, to_gates(mask), batch, mode);
}

double batch_loss(const Network& net, const GateVector& gates, const Batch& batch,
                  ForwardMode mode) {
  ActivationCache cache;
  forward_impl(net, gates, batch, mode == ForwardMode::kTrain, cache);
  return cross_entropy(cache.logits, batch.labels);
}

EvalResult evaluate(const Network& net, const UnitMask& mask, const Batch& batch) {
  validate_mask(net, mask);
  if (batch.labels.size() != batch.size()) throw InvalidInput("label count mismatch");
  Matrix logits = forward_eval(net, mask, batch);
  EvalResult r;
  r.loss = cross_entropy(logits, batch.labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols; ++c) {
      if (logits(i, c) > logits(i, best)) best = c;
    }
    if (static_cast<int>(best) == batch.labels[i]) ++correct;
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(logits.rows);
  return r;
}

void sgd_step(Network& net, const std::vector<LayerGrads>& grads, double lr) {
  if (grads.size() != net.layers.size()) throw InvalidInput("gradient/layer count mismatch");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    DenseLayer& layer = net.layers[l];
    const LayerGrads& g = grads[l];
    for (std::size_t i = 0; i < layer.weights.data.size(); ++i) {
      layer.weights.data[i] -= lr * g.weights.data[i];
    }
    for (std::size_t c = 0; c < layer.bias.size(); ++c) layer.bias[c] -= lr * g.bias[c];
    if (layer.has_norm()) {
      for (std::size_t c = 0; c < layer.bn_gamma.size(); ++c) {
        layer.bn_gamma[c] -= lr * g.bn_gamma[c];
        layer.bn_beta[c] -= lr * g.bn_beta[c];
      }
    }
  }
}

CountResult masked_counts(const Network& net, const UnitMask& mask) {
  validate_mask(net, mask);
  CountResult r;
  const std::size_t num_layers = net.layers.size();
  for (std::size_t l = 0; l < num_layers; ++l) {
    long long in_active = 0, out_active = 0;
    if (l == 0) {
      in_active = static_cast<long long>(net.layer_sizes[0]);
    } else {
      for (std::uint8_t v : mask.per_layer[l - 1]) in_active += v;
    }
    const bool is_output = (l == num_layers - 1);
    if (is_output) {
      out_active = static_cast<long long>(net.output_size());
    } else {
      for (std::uint8_t v : mask.per_layer[l]) out_active += v;
    }
    r.params += in_active * out_active + out_active;  // weights + bias
    r.flops += 2 * in_active * out_active;
    if (!is_output) {
      r.params += 4 * out_active;  // gamma, beta, running mean, running var
      r.flops += 2 * out_active;
    }
  }
  return r;
}

Network shrink_network(const Network& net, const UnitMask& mask) {
  validate_mask(net, mask);
  const std::size_t hidden = net.hidden_layer_count();
  std::vector<std::vector<std::size_t>> keep(hidden);
  for (std::size_t k = 0; k < hidden; ++k) {
    for (std::size_t c = 0; c < mask.per_layer[k].size(); ++c) {
      if (mask.per_layer[k][c]) keep[k].push_back(c);
    }
  }

  Network out;
  out.layer_sizes.push_back(net.input_size());
  for (std::size_t k = 0; k < hidden; ++k) out.layer_sizes.push_back(keep[k].size());
  out.layer_sizes.push_back(net.output_size());
  out.layers.resize(net.layers.size());

  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const DenseLayer& src = net.layers[l];
    DenseLayer& dst = out.layers[l];
    const bool is_output = (l == net.layers.size() - 1);
    std::vector<std::size_t> rows, cols;
    if (l == 0) {
      rows.resize(net.input_size());
      for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    } else {
      rows = keep[l - 1];
    }
    if (is_output) {
      cols.resize(net.output_size());
      for (std::size_t j = 0; j < cols.size(); ++j) cols[j] = j;
    } else {
      cols = keep[l];
    }
    dst.weights = Matrix(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < cols.size(); ++j) dst.weights(i, j) = src.weights(rows[i], cols[j]);
    }
    dst.bias.resize(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) dst.bias[j] = src.bias[cols[j]];
    if (!is_output) {
      dst.bn_gamma.resize(cols.size());
      dst.bn_beta.resize(cols.size());
      dst.bn_running_mean.resize(cols.size());
      dst.bn_running_var.resize(cols.size());
      for (std::size_t j = 0; j < cols.size(); ++j) {
        dst.bn_gamma[j] = src.bn_gamma[cols[j]];
        dst.bn_beta[j] = src.bn_beta[cols[j]];
        dst.bn_running_mean[j] = src.bn_running_mean[cols[j]];
        dst.bn_running_var[j] = src.bn_running_var[cols[j]];
      }
    }
  }
  return out;
}

}  // namespace adds

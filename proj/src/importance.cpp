#include "adds/importance.hpp"

#include <cmath>

#include "adds/errors.hpp"

namespace adds {

ImportanceVector slim_importance(const Network& net) {
  ImportanceVector out;
  out.per_layer.resize(net.hidden_layer_count());
  for (std::size_t k = 0; k < net.hidden_layer_count(); ++k) {
    const DenseLayer& layer = net.layers[k];
    if (!layer.has_norm()) throw InvalidInput("hidden layer without normalization");
    out.per_layer[k].resize(layer.out_size());
    for (std::size_t c = 0; c < layer.out_size(); ++c) {
      out.per_layer[k][c] = std::fabs(layer.bn_gamma[c]);
    }
  }
  return out;
}

LrpRelevance lrp_relevance(const Network& net, const UnitMask& mask, const Batch& batch) {
  if (batch.labels.size() != batch.size()) throw InvalidInput("label count mismatch");
  for (int y : batch.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= net.output_size()) {
      throw InvalidInput("label out of range");
    }
  }
  ActivationCache cache;
  forward_eval(net, mask, batch, &cache);
  const Matrix probs = softmax_rows(cache.logits);
  const std::size_t n = batch.size();
  const std::size_t hidden = net.hidden_layer_count();

  LrpRelevance out;
  out.layer_relevance.resize(hidden + 2);
  out.layer_relevance[0] = Matrix(n, net.input_size(), 0.0);
  for (std::size_t k = 0; k < hidden; ++k) {
    out.layer_relevance[k + 1] = Matrix(n, net.layer_sizes[k + 1], 0.0);
  }
  Matrix& output_rel = out.layer_relevance[hidden + 1];
  output_rel = Matrix(n, net.output_size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    output_rel(i, batch.labels[i]) = probs(i, batch.labels[i]);
  }

  // Walk layers output -> input; layer l consumes relevance at l+1.
  for (std::size_t l = hidden + 1; l-- > 0;) {
    const Matrix& act = l == 0 ? cache.input : cache.activation[l - 1];
    const Matrix& upper = out.layer_relevance[l + 1];
    Matrix& lower = out.layer_relevance[l];
    const DenseLayer& layer = net.layers[l];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < layer.out_size(); ++j) {
        const double rj = upper(i, j);
        if (rj == 0.0) continue;
        double denom = 0.0;
        for (std::size_t u = 0; u < layer.in_size(); ++u) {
          const double zij = act(i, u) * layer.weights(u, j);
          if (zij > 0.0) denom += zij;
        }
        if (denom <= 0.0) {
          ++out.dropped_messages;
          continue;
        }
        for (std::size_t u = 0; u < layer.in_size(); ++u) {
          const double zij = act(i, u) * layer.weights(u, j);
          if (zij > 0.0) lower(i, u) += zij / denom * rj;
        }
      }
    }
  }
  return out;
}

ImportanceVector lrp_importance(const Network& net, const UnitMask& mask,
                                const Batch& batch, long long* dropped_messages) {
  LrpRelevance rel = lrp_relevance(net, mask, batch);
  if (dropped_messages) *dropped_messages = rel.dropped_messages;
  const std::size_t n = batch.size();
  ImportanceVector out;
  out.per_layer.resize(net.hidden_layer_count());
  for (std::size_t k = 0; k < net.hidden_layer_count(); ++k) {
    const Matrix& r = rel.layer_relevance[k + 1];
    out.per_layer[k].assign(r.cols, 0.0);
    for (std::size_t c = 0; c < r.cols; ++c) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += r(i, c);
      out.per_layer[k][c] = sum / static_cast<double>(n);
    }
  }
  return out;
}

ImportanceVector fc_activation_importance(const Network& net, const UnitMask& mask,
                                          const Batch& batch) {
  ActivationCache cache;
  forward_eval(net, mask, batch, &cache);
  const std::size_t n = batch.size();
  ImportanceVector out;
  out.per_layer.resize(net.hidden_layer_count());
  for (std::size_t k = 0; k < net.hidden_layer_count(); ++k) {
    const Matrix& a = cache.activation[k];
    out.per_layer[k].assign(a.cols, 0.0);
    for (std::size_t c = 0; c < a.cols; ++c) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += std::fabs(a(i, c));
      out.per_layer[k][c] = sum / static_cast<double>(n);
    }
  }
  return out;
}

ImportanceVector compute_importance(ImportanceMode mode, const Network& net,
                                    const UnitMask& mask, const Batch& batch) {
  switch (mode) {
    case ImportanceMode::kSlim:
      return slim_importance(net);
    case ImportanceMode::kLrp:
      return lrp_importance(net, mask, batch);
    case ImportanceMode::kFcActivation:
      return fc_activation_importance(net, mask, batch);
  }
  throw InvalidInput("unknown importance mode");
}

}  // namespace adds

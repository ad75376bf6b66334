#pragma once

#include <vector>

#include "adds/network.hpp"

namespace adds {

// Nonnegative per-unit scores, aligned with UnitMask layout.
struct ImportanceVector {
  std::vector<std::vector<double>> per_layer;
};

enum class ImportanceMode { kSlim, kLrp, kFcActivation };

// Network-slimming criterion: |gamma| of each hidden unit's normalization.
ImportanceVector slim_importance(const Network& net);

// Relevance of every unit, per sample. Layer 0 is the input, layers 1..K the
// hidden layers, layer K+1 the output (seeded with the softmax probability of
// the true class). Propagation follows the positive-contribution rule
//   R_i = sum_j (a_i w_ij)^+ / sum_i' (a_i' w_i'j)^+ * R_j
// and is conservative except where a unit's positive-contribution denominator
// vanishes; such messages are dropped and counted.
struct LrpRelevance {
  std::vector<Matrix> layer_relevance;  // (K+2) matrices, n x units
  long long dropped_messages = 0;
};

LrpRelevance lrp_relevance(const Network& net, const UnitMask& mask, const Batch& batch);

// Mean relevance per hidden unit over the batch; masked units score 0.
ImportanceVector lrp_importance(const Network& net, const UnitMask& mask,
                                const Batch& batch, long long* dropped_messages = nullptr);

// Mean |post-activation| per hidden unit over the batch.
ImportanceVector fc_activation_importance(const Network& net, const UnitMask& mask,
                                          const Batch& batch);

// Dispatch on mode; slim ignores the batch.
ImportanceVector compute_importance(ImportanceMode mode, const Network& net,
                                    const UnitMask& mask, const Batch& batch);

}  // namespace adds

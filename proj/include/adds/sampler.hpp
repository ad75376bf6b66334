#pragma once

#include <cstdint>
#include <vector>

#include "adds/rng.hpp"

namespace adds {

// Per-layer trainable keep ratios with the cached shift roots and the shared
// sampling temperature.
struct SparsenessVector {
  std::vector<double> alpha;  // in (0, 1], one per hidden layer
  std::vector<double> beta;   // cached root of the sparseness equation
  double epsilon = 1.0;

  bool operator==(const SparsenessVector&) const = default;
};

struct SamplingConfig {
  double epsilon_init = 1.0;
  double epsilon_decay = 0.98;  // per round
  double alpha_min = 0.05;
  double root_tolerance = 1e-8;
  double lambda = 0.0;  // default regularizer weight when not client-specific
  std::uint64_t rng_seed = 0;

  bool operator==(const SamplingConfig&) const = default;
};

// Keep probability p = logistic((b - beta) / epsilon), clamped away from
// {0, 1} so variance weights stay finite.
double sampling_prob(double b, double beta, double epsilon);
std::vector<double> sampling_probs(const std::vector<double>& b, double beta,
                                   double epsilon);

// Root of h(beta) = sum_c p_c(beta) - alpha*C, found by bisection on
// [min(b) - 40 eps, max(b) + 40 eps] where the logistic has saturated on both
// sides. h is monotone decreasing in beta. alpha must lie strictly in (0, 1);
// alpha = 1 is handled upstream by skipping sampling for the layer.
double solve_shift(const std::vector<double>& b, double alpha, double epsilon,
                   double tol);

// Independent Bernoulli draws, deterministic under the generator seed. An
// all-zero draw would kill the layer, so the highest-probability unit (ties to
// the lower index) is forced on in that case.
std::vector<std::uint8_t> sample_mask(const std::vector<double>& p, Rng& rng);

struct SparsenessGrad {
  double value = 0.0;
  bool saturated = false;  // all probabilities pinned at 0/1
};

// Chained architecture gradient
//   dL/dalpha = C * sum_c g_c * w_c,  w_c = p_c(1-p_c) / sum p(1-p),
// with g_c the straight-through estimate of dL/dp_c.
SparsenessGrad sparseness_grad(const std::vector<double>& unit_grads,
                               const std::vector<double>& p);

// Implicit root sensitivity d beta / d alpha = -epsilon*C / sum p(1-p).
double shift_alpha_gradient(const std::vector<double>& p, double epsilon);

struct RegularizerResult {
  double value = 0.0;
  std::vector<double> grads;
};

// lambda * sum_k (alpha_k)^2 with per-layer gradients 2*lambda*alpha_k.
RegularizerResult regularizer(const std::vector<double>& alpha, double lambda);

// epsilon -> 0 limit: keep the ceil(alpha*C) units with the largest
// importance, ties to the lower index.
std::vector<std::uint8_t> harden(const std::vector<double>& b, double alpha);

// epsilon_init * decay^round, floored at 1e-4.
double anneal(const SamplingConfig& cfg, int round);

}  // namespace adds

#include "adds/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "adds/errors.hpp"

namespace adds {

namespace {
constexpr double kProbFloor = 1e-12;
constexpr double kEpsilonFloor = 1e-4;
}  // namespace

double sampling_prob(double b, double beta, double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidInput("sampling_prob: epsilon must be positive");
  const double p = 1.0 / (1.0 + std::exp(-(b - beta) / epsilon));
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

std::vector<double> sampling_probs(const std::vector<double>& b, double beta,
                                   double epsilon) {
  std::vector<double> p(b.size());
  for (std::size_t c = 0; c < b.size(); ++c) p[c] = sampling_prob(b[c], beta, epsilon);
  return p;
}

double solve_shift(const std::vector<double>& b, double alpha, double epsilon,
                   double tol) {
  if (b.empty()) throw InvalidInput("solve_shift: empty importance vector");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw InvalidInput("solve_shift: alpha must lie strictly in (0,1), got " +
                       std::to_string(alpha));
  }
  if (!(epsilon > 0.0)) throw InvalidInput("solve_shift: epsilon must be positive");
  if (!(tol > 0.0)) throw InvalidInput("solve_shift: tolerance must be positive");

  const double target = alpha * static_cast<double>(b.size());
  const auto h = [&](double beta) {
    double s = 0.0;
    for (double bc : b) s += sampling_prob(bc, beta, epsilon);
    return s - target;
  };

  // The logistic saturates within 40 epsilon, so this bracket always straddles
  // the root for alpha in (0,1).
  double lo = *std::min_element(b.begin(), b.end()) - 40.0 * epsilon;
  double hi = *std::max_element(b.begin(), b.end()) + 40.0 * epsilon;
  double mid = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    mid = 0.5 * (lo + hi);
    const double hm = h(mid);
    if (std::fabs(hm) <= tol) return mid;
    if (hm > 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  if (std::fabs(h(mid)) > tol) {
    throw NumericError("solve_shift: bisection failed to reach tolerance");
  }
  return mid;
}

std::vector<std::uint8_t> sample_mask(const std::vector<double>& p, Rng& rng) {
  if (p.empty()) throw InvalidInput("sample_mask: empty probability vector");
  std::vector<std::uint8_t> mask(p.size(), 0);
  bool any = false;
  std::size_t best = 0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (!(p[c] >= 0.0 && p[c] <= 1.0)) {
      throw InvalidInput("sample_mask: probability out of [0,1]");
    }
    mask[c] = rng.uniform() < p[c] ? 1 : 0;
    any = any || mask[c];
    if (p[c] > p[best]) best = c;
  }
  if (!any) mask[best] = 1;  // a dead layer breaks the forward pass
  return mask;
}

SparsenessGrad sparseness_grad(const std::vector<double>& unit_grads,
                               const std::vector<double>& p) {
  if (unit_grads.size() != p.size()) {
    throw InvalidInput("sparseness_grad: gradient/probability length mismatch");
  }
  if (p.empty()) throw InvalidInput("sparseness_grad: empty input");
  double denom = 0.0;
  for (double pc : p) denom += pc * (1.0 - pc);
  // Clamped probabilities contribute ~1e-12 each, so a fully saturated layer
  // shows up as denom ~ C * 1e-12.
  if (denom <= 1.25e-12 * static_cast<double>(p.size())) return {0.0, true};
  double s = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    s += unit_grads[c] * (p[c] * (1.0 - p[c]) / denom);
  }
  return {static_cast<double>(p.size()) * s, false};
}

double shift_alpha_gradient(const std::vector<double>& p, double epsilon) {
  double denom = 0.0;
  for (double pc : p) denom += pc * (1.0 - pc);
  if (denom <= 1e-12) return 0.0;
  return -epsilon * static_cast<double>(p.size()) / denom;
}

RegularizerResult regularizer(const std::vector<double>& alpha, double lambda) {
  if (lambda < 0.0) throw InvalidInput("regularizer: lambda must be >= 0");
  RegularizerResult r;
  r.grads.resize(alpha.size());
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    r.value += lambda * alpha[k] * alpha[k];
    r.grads[k] = 2.0 * lambda * alpha[k];
  }
  return r;
}

std::vector<std::uint8_t> harden(const std::vector<double>& b, double alpha) {
  if (b.empty()) throw InvalidInput("harden: empty importance vector");
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw InvalidInput("harden: alpha must lie in (0,1]");
  }
  const double c = static_cast<double>(b.size());
  // Nudge before ceil so representation error in alpha*C cannot bump an
  // intended integer count.
  long long n = static_cast<long long>(std::ceil(alpha * c - 1e-9 * std::max(1.0, alpha * c)));
  n = std::clamp<long long>(n, 1, static_cast<long long>(b.size()));

  std::vector<std::size_t> order(b.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (b[i] != b[j]) return b[i] > b[j];
    return i < j;
  });
  std::vector<std::uint8_t> mask(b.size(), 0);
  for (long long i = 0; i < n; ++i) mask[order[i]] = 1;
  return mask;
}

double anneal(const SamplingConfig& cfg, int round) {
  if (round < 0) throw InvalidInput("anneal: round must be >= 0");
  const double eps = cfg.epsilon_init * std::pow(cfg.epsilon_decay, round);
  return std::max(eps, kEpsilonFloor);
}

}  // namespace adds

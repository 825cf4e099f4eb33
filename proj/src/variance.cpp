#include "issgd/variance.hpp"

#include <cmath>

#include <fmt/format.h>

namespace issgd {

namespace {

void require_nonempty(std::size_t n, const char* what) {
  if (n == 0) throw std::invalid_argument(fmt::format("{}: empty input", what));
}

}  // namespace

double tr_sigma_general(std::span<const double> weights, std::span<const double> grad_sq_norms, double gtrue_sq) {
  require_nonempty(weights.size(), "tr_sigma_general");
  if (weights.size() != grad_sq_norms.size()) {
    throw std::invalid_argument(
        fmt::format("tr_sigma_general: {} weights for {} norms", weights.size(), grad_sq_norms.size()));
  }
  const double n = static_cast<double>(weights.size());
  double weight_sum = 0.0;
  double ratio_sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double w = weights[i];
    const double f2 = grad_sq_norms[i];
    if (!(w >= 0.0)) throw std::invalid_argument(fmt::format("tr_sigma_general: negative weight {} at {}", w, i));
    weight_sum += w;
    if (f2 == 0.0) continue;
    if (w == 0.0) throw SupportError(fmt::format("tr_sigma_general: zero weight with nonzero gradient at {}", i));
    ratio_sum += f2 / w;
  }
  return (weight_sum / n) * (ratio_sum / n) - gtrue_sq;
}

double tr_sigma_ideal(std::span<const double> grad_norms, double gtrue_sq) {
  require_nonempty(grad_norms.size(), "tr_sigma_ideal");
  double sum = 0.0;
  for (double g : grad_norms) sum += g;
  const double mean = sum / static_cast<double>(grad_norms.size());
  return mean * mean - gtrue_sq;
}

double tr_sigma_unif(std::span<const double> grad_sq_norms, double gtrue_sq) {
  require_nonempty(grad_sq_norms.size(), "tr_sigma_unif");
  double sum = 0.0;
  for (double g2 : grad_sq_norms) sum += g2;
  return sum / static_cast<double>(grad_sq_norms.size()) - gtrue_sq;
}

double tr_sigma_stale(std::span<const double> old_weights, std::span<const double> fresh_sq_norms, double gtrue_sq) {
  return tr_sigma_general(old_weights, fresh_sq_norms, gtrue_sq);
}

double estimate_gtrue_sq(std::span<const double> minibatch_grad_norms) {
  require_nonempty(minibatch_grad_norms.size(), "estimate_gtrue_sq");
  double sum = 0.0;
  for (double g : minibatch_grad_norms) sum += g;
  const double mean = sum / static_cast<double>(minibatch_grad_norms.size());
  return mean * mean;
}

double sqrt_clamped(double v) { return v > 0.0 ? std::sqrt(v) : 0.0; }

AlignedPair intersect_by_index(std::span<const IndexedValue> a, std::span<const IndexedValue> b) {
  AlignedPair out;
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].index < b[j].index) {
      ++i;
    } else if (b[j].index < a[i].index) {
      ++j;
    } else {
      out.first.push_back(a[i].value);
      out.second.push_back(b[j].value);
      ++i;
      ++j;
    }
  }
  return out;
}

}  // namespace issgd

#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace issgd {

// A proposal puts zero mass on an example whose gradient is nonzero.
class SupportError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Trace of the covariance of the importance-sampled gradient estimator, for the
// proposal proportional to `weights`:
//   mean(w) * mean(|f|^2 / w) - gtrue_sq
double tr_sigma_general(std::span<const double> weights, std::span<const double> grad_sq_norms, double gtrue_sq);

// Optimal proposal (weights equal to the gradient norms): mean(|g|)^2 - gtrue_sq.
double tr_sigma_ideal(std::span<const double> grad_norms, double gtrue_sq);

// Uniform sampling: mean(|g|^2) - gtrue_sq.
double tr_sigma_unif(std::span<const double> grad_sq_norms, double gtrue_sq);

// Proposal built from outdated weights, evaluated against fresh squared norms.
double tr_sigma_stale(std::span<const double> old_weights, std::span<const double> fresh_sq_norms, double gtrue_sq);

// Square of the mean of per-minibatch aggregate gradient norms. Never below the
// exact |g_true|^2 when the minibatches partition the set (triangle inequality).
double estimate_gtrue_sq(std::span<const double> minibatch_grad_norms);

struct VarianceReport {
  static constexpr double missing = std::numeric_limits<double>::quiet_NaN();

  std::int64_t step = 0;
  double tr_ideal = missing;
  double tr_stale = missing;
  double tr_unif = missing;
  double gtrue_sq_estimate = missing;
};

// sqrt(max(v, 0)), for display on the same scale as the gradients.
double sqrt_clamped(double v);

struct IndexedValue {
  std::uint32_t index = 0;
  double value = 0.0;
};

// Aligns two index-sorted sequences on their common indices.
struct AlignedPair {
  std::vector<double> first;
  std::vector<double> second;
};
AlignedPair intersect_by_index(std::span<const IndexedValue> a, std::span<const IndexedValue> b);

}  // namespace issgd

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace issgd {

using Rng = std::mt19937_64;

// Probability weight for one training example, as recorded by the store.
struct WeightEntry {
  std::uint32_t index = 0;
  double weight = 0.0;
  std::uint64_t param_version = 0;
  double timestamp = 0.0;

  friend bool operator==(const WeightEntry&, const WeightEntry&) = default;
};

// Which weight entries a consumer accepts.
struct WeightFilter {
  enum class Kind : std::uint8_t { all = 0, max_age = 1, exact_version = 2 };

  Kind kind = Kind::all;
  double max_age_seconds = 0.0;
  std::uint64_t version = 0;

  static WeightFilter all() { return {}; }
  static WeightFilter max_age(double seconds) { return {Kind::max_age, seconds, 0}; }
  static WeightFilter exact_version(std::uint64_t v) { return {Kind::exact_version, 0.0, v}; }

  bool accepts(const WeightEntry& e, double now) const;

  friend bool operator==(const WeightFilter&, const WeightFilter&) = default;
};

class StalenessStarvation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateProposal : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RetainedWeight {
  std::uint32_t index = 0;
  double smoothed_weight = 0.0;
};

// Normalized sampling distribution over the retained examples. The retained set
// is treated as the training population when computing zbar.
class Proposal {
 public:
  Proposal(std::vector<RetainedWeight> retained, std::size_t population);

  std::span<const RetainedWeight> retained() const { return retained_; }
  std::size_t population() const { return population_; }
  double total_smoothed() const { return total_; }
  // Mean smoothed weight over the retained set.
  double zbar() const { return total_ / static_cast<double>(retained_.size()); }
  double kept_fraction() const {
    return static_cast<double>(retained_.size()) / static_cast<double>(population_);
  }
  double probability(std::size_t k) const { return retained_[k].smoothed_weight / total_; }

  // Position in retained() of the entry whose cumulative interval contains u in [0, total).
  std::size_t locate(double u) const;

 private:
  std::vector<RetainedWeight> retained_;
  std::vector<double> cumulative_;
  std::size_t population_ = 0;
  double total_ = 0.0;
};

// Filters entries, adds the smoothing constant to every retained weight and
// normalizes. Throws StalenessStarvation when nothing passes the filter and
// DegenerateProposal when all retained weights are zero with no smoothing.
Proposal build_proposal(std::span<const WeightEntry> entries, std::size_t population, double smoothing,
                        const WeightFilter& filter = WeightFilter::all(), double now = 0.0);

// Every example with weight 1.
Proposal uniform_proposal(std::size_t population);

struct Minibatch {
  std::vector<std::uint32_t> indices;
  // c_m = zbar / (M * smoothed weight of indices[m])
  std::vector<double> coefficients;
};

// M draws with replacement, by inverse CDF over the cumulative weights.
Minibatch draw_minibatch(const Proposal& proposal, std::size_t m, Rng& rng);

// Exact expectation of the M = 1 importance-sampled gradient estimator.
// per_example_grads is indexed by example id.
std::vector<double> expected_is_gradient(const Proposal& proposal, std::span<const std::vector<double>> per_example_grads);

}  // namespace issgd

#include "issgd/sampler.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace issgd {

bool WeightFilter::accepts(const WeightEntry& e, double now) const {
  switch (kind) {
    case Kind::all:
      return true;
    case Kind::max_age:
      return now - e.timestamp <= max_age_seconds;
    case Kind::exact_version:
      return e.param_version == version;
  }
  return false;
}

Proposal::Proposal(std::vector<RetainedWeight> retained, std::size_t population)
    : retained_(std::move(retained)), population_(population) {
  if (retained_.empty()) throw StalenessStarvation("proposal has no retained examples");
  if (population_ < retained_.size()) throw std::invalid_argument("proposal: population smaller than retained set");
  cumulative_.reserve(retained_.size());
  for (const auto& r : retained_) {
    if (!(r.smoothed_weight > 0.0) || !std::isfinite(r.smoothed_weight)) {
      throw DegenerateProposal(fmt::format("example {} has non-positive weight {}", r.index, r.smoothed_weight));
    }
    total_ += r.smoothed_weight;
    cumulative_.push_back(total_);
  }
}

std::size_t Proposal::locate(double u) const {
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  if (it == cumulative_.end()) --it;
  return static_cast<std::size_t>(it - cumulative_.begin());
}

Proposal build_proposal(std::span<const WeightEntry> entries, std::size_t population, double smoothing,
                        const WeightFilter& filter, double now) {
  if (population == 0) throw std::invalid_argument("build_proposal: empty population");
  if (!(smoothing >= 0.0) || !std::isfinite(smoothing)) {
    throw std::invalid_argument("build_proposal: smoothing must be finite and >= 0");
  }
  std::vector<RetainedWeight> retained;
  retained.reserve(entries.size());
  std::vector<bool> seen(population, false);
  bool any_positive = false;
  for (const auto& e : entries) {
    if (e.index >= population) {
      throw std::invalid_argument(fmt::format("build_proposal: index {} outside [0, {})", e.index, population));
    }
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
      throw std::invalid_argument(fmt::format("build_proposal: invalid weight {} for index {}", e.weight, e.index));
    }
    if (seen[e.index]) throw std::invalid_argument(fmt::format("build_proposal: duplicate index {}", e.index));
    seen[e.index] = true;
    if (!filter.accepts(e, now)) continue;
    any_positive = any_positive || e.weight > 0.0;
    retained.push_back({e.index, e.weight + smoothing});
  }
  if (retained.empty()) throw StalenessStarvation("no weight entry passed the staleness filter");
  if (!any_positive && smoothing == 0.0) throw DegenerateProposal("all weights are zero and smoothing is zero");
  std::sort(retained.begin(), retained.end(),
            [](const RetainedWeight& a, const RetainedWeight& b) { return a.index < b.index; });
  return Proposal(std::move(retained), population);
}

Proposal uniform_proposal(std::size_t population) {
  if (population == 0) throw std::invalid_argument("uniform_proposal: empty population");
  std::vector<RetainedWeight> retained(population);
  for (std::size_t i = 0; i < population; ++i) retained[i] = {static_cast<std::uint32_t>(i), 1.0};
  return Proposal(std::move(retained), population);
}

Minibatch draw_minibatch(const Proposal& proposal, std::size_t m, Rng& rng) {
  if (m == 0) throw std::invalid_argument("draw_minibatch: batch size must be >= 1");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double zbar = proposal.zbar();
  const auto retained = proposal.retained();
  Minibatch batch;
  batch.indices.reserve(m);
  batch.coefficients.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& pick = retained[proposal.locate(unit(rng) * proposal.total_smoothed())];
    batch.indices.push_back(pick.index);
    batch.coefficients.push_back(zbar / (static_cast<double>(m) * pick.smoothed_weight));
  }
  return batch;
}

std::vector<double> expected_is_gradient(const Proposal& proposal, std::span<const std::vector<double>> per_example_grads) {
  const auto retained = proposal.retained();
  const std::size_t dim = per_example_grads.empty() ? 0 : per_example_grads.front().size();
  std::vector<double> out(dim, 0.0);
  const double zbar = proposal.zbar();
  for (std::size_t k = 0; k < retained.size(); ++k) {
    const auto& r = retained[k];
    if (r.index >= per_example_grads.size()) {
      throw std::invalid_argument(fmt::format("expected_is_gradient: no gradient for example {}", r.index));
    }
    const auto& g = per_example_grads[r.index];
    if (g.size() != dim) throw std::invalid_argument("expected_is_gradient: ragged gradients");
    const double scale = proposal.probability(k) * zbar / r.smoothed_weight;
    for (std::size_t j = 0; j < dim; ++j) out[j] += scale * g[j];
  }
  return out;
}

}  // namespace issgd

#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <vector>

#include "issgd/sampler.hpp"

using namespace issgd;

namespace {

std::vector<WeightEntry> entries(std::initializer_list<double> weights) {
  std::vector<WeightEntry> out;
  std::uint32_t i = 0;
  for (double w : weights) out.push_back({i++, w, 1, 0.0});
  return out;
}

}  // namespace

TEST_CASE("probabilities normalize the weights") {
  const auto p = build_proposal(entries({1, 3}), 2, 0.0);
  CHECK(p.probability(0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(p.probability(1) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("smoothing is added before normalizing") {
  const auto p = build_proposal(entries({1, 3}), 2, 10.0);
  CHECK(p.retained()[0].smoothed_weight == 11.0);
  CHECK(p.probability(0) == doctest::Approx(11.0 / 24.0).epsilon(1e-15));
  CHECK(p.probability(1) == doctest::Approx(13.0 / 24.0).epsilon(1e-15));
}

TEST_CASE("huge smoothing approaches the uniform distribution") {
  std::mt19937_64 rng(1);
  std::exponential_distribution<double> expo(0.1);
  std::vector<WeightEntry> es;
  for (std::uint32_t i = 0; i < 1000; ++i) es.push_back({i, expo(rng), 1, 0.0});
  const auto p = build_proposal(es, es.size(), 1e12);
  double worst = 0.0;
  for (std::size_t k = 0; k < es.size(); ++k) worst = std::max(worst, std::abs(p.probability(k) - 1e-3));
  CHECK(worst <= 1e-9);
}

TEST_CASE("filters, starvation and degenerate proposals") {
  std::vector<WeightEntry> es{{0, 1.0, 1, 0.0}, {1, 2.0, 2, 5.0}, {2, 3.0, 2, 9.0}};
  const auto by_version = build_proposal(es, 4, 0.0, WeightFilter::exact_version(2));
  CHECK(by_version.retained().size() == 2);
  CHECK(by_version.kept_fraction() == 0.5);
  const auto by_age = build_proposal(es, 4, 0.0, WeightFilter::max_age(4.0), 10.0);
  REQUIRE(by_age.retained().size() == 1);
  CHECK(by_age.retained()[0].index == 2);
  CHECK_THROWS_AS(build_proposal(es, 4, 0.0, WeightFilter::exact_version(7)), StalenessStarvation);
  CHECK_THROWS_AS(build_proposal(entries({0, 0}), 2, 0.0), DegenerateProposal);
  CHECK_NOTHROW(build_proposal(entries({0, 0}), 2, 1.0));
}

TEST_CASE("invalid entries are rejected") {
  CHECK_THROWS(build_proposal(entries({1, -1}), 2, 0.0));
  CHECK_THROWS(build_proposal(entries({1, NAN}), 2, 0.0));
  CHECK_THROWS(build_proposal(entries({1, 2, 3}), 2, 0.0));
  std::vector<WeightEntry> dup{{0, 1.0, 1, 0.0}, {0, 2.0, 1, 0.0}};
  CHECK_THROWS(build_proposal(dup, 2, 0.0));
}

TEST_CASE("coefficients: uniform gives 1/M") {
  Rng rng(3);
  const auto b = draw_minibatch(uniform_proposal(10), 7, rng);
  REQUIRE(b.indices.size() == 7);
  for (double c : b.coefficients) CHECK(c == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
}

TEST_CASE("coefficient for weights (1, 3) at index 1 is 2/3") {
  const auto p = build_proposal(entries({1, 3}), 2, 0.0);
  Rng rng(5);
  bool seen = false;
  for (int t = 0; t < 50 && !seen; ++t) {
    const auto b = draw_minibatch(p, 1, rng);
    if (b.indices[0] == 1) {
      CHECK(b.coefficients[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
      seen = true;
    } else {
      CHECK(b.coefficients[0] == doctest::Approx(2.0).epsilon(1e-15));
    }
  }
  CHECK(seen);
}

TEST_CASE("single retained entry") {
  std::vector<WeightEntry> es{{4, 2.0, 1, 0.0}};
  const auto p = build_proposal(es, 10, 0.0);
  Rng rng(7);
  const auto b = draw_minibatch(p, 5, rng);
  for (std::size_t m = 0; m < 5; ++m) {
    CHECK(b.indices[m] == 4);
    CHECK(b.coefficients[m] == doctest::Approx(p.zbar() / (5.0 * 2.0)));
  }
}

TEST_CASE("same seed, same minibatch") {
  const auto p = build_proposal(entries({1, 5, 2, 0.5, 9}), 5, 0.1);
  Rng a(42);
  Rng b(42);
  const auto x = draw_minibatch(p, 64, a);
  const auto y = draw_minibatch(p, 64, b);
  CHECK(x.indices == y.indices);
  CHECK(x.coefficients == y.coefficients);
}

TEST_CASE("empirical frequencies match the proposal") {
  const auto p = build_proposal(entries({1, 5, 2, 0.5, 9, 0.01}), 6, 0.0);
  Rng rng(99);
  const std::size_t m = 100, t = 2000;
  std::vector<double> counts(6, 0.0);
  for (std::size_t r = 0; r < t; ++r) {
    for (auto i : draw_minibatch(p, m, rng).indices) counts[i] += 1.0;
  }
  const double total = static_cast<double>(m * t);
  for (std::size_t k = 0; k < 6; ++k) {
    const double w = p.probability(k);
    CHECK(std::abs(counts[k] / total - w) <= 4.0 * std::sqrt(w * (1.0 - w) / total));
  }
}

TEST_CASE("expected IS gradient equals the mean gradient") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.01, 5.0);
  std::vector<std::vector<double>> grads(4, std::vector<double>(3));
  for (auto& v : grads) for (auto& x : v) x = g(rng);
  std::vector<double> mean(3, 0.0);
  for (const auto& v : grads) for (std::size_t d = 0; d < 3; ++d) mean[d] += v[d] / 4.0;

  std::vector<WeightEntry> es;
  for (std::uint32_t i = 0; i < 4; ++i) es.push_back({i, u(rng), 1, 0.0});
  const auto e = expected_is_gradient(build_proposal(es, 4, 0.0), grads);
  for (std::size_t d = 0; d < 3; ++d) CHECK(std::abs(e[d] - mean[d]) <= 1e-12);

  const auto uni = expected_is_gradient(uniform_proposal(4), grads);
  for (std::size_t d = 0; d < 3; ++d) CHECK(std::abs(uni[d] - mean[d]) <= 1e-12);

  std::vector<std::vector<double>> one{{1.5, -2.0}};
  std::vector<WeightEntry> single{{0, 3.0, 1, 0.0}};
  CHECK(expected_is_gradient(build_proposal(single, 1, 0.0), one) == one[0]);
}

TEST_CASE("locate respects cumulative boundaries") {
  const auto p = build_proposal(entries({1, 3}), 2, 0.0);
  CHECK(p.locate(0.0) == 0);
  CHECK(p.locate(0.999) == 0);
  CHECK(p.locate(1.0) == 1);
  CHECK(p.locate(3.999) == 1);
}

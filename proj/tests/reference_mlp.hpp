#pragma once

// Scalar-loop reference for the MLP, written independently of the library's
// matrix code. Used as the oracle for finite differences and forward checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "issgd/mlp.hpp"

namespace ref {

inline double example_loss(const issgd::ModelParams& p, std::span<const double> x, issgd::Label y) {
  std::vector<double> a(x.begin(), x.end());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& w = p.layers[l].weights;
    std::vector<double> z(w.cols());
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = p.layers[l].bias[j];
      for (std::size_t i = 0; i < w.rows(); ++i) s += a[i] * w(i, j);
      z[j] = s;
    }
    if (l + 1 < p.layers.size()) {
      for (auto& v : z) v = v > 0.0 ? v : 0.0;
    } else {
      const double mx = *std::max_element(z.begin(), z.end());
      double sum = 0.0;
      for (double v : z) sum += std::exp(v - mx);
      return -(z[y] - mx - std::log(sum));
    }
    a = std::move(z);
  }
  return 0.0;
}

inline double mean_loss(const issgd::ModelParams& p, const issgd::Matrix& x, std::span<const issgd::Label> y) {
  double s = 0.0;
  for (std::size_t n = 0; n < x.rows(); ++n) s += example_loss(p, x.row(n), y[n]);
  return s / static_cast<double>(x.rows());
}

inline std::vector<double> fd_gradient(const issgd::ModelParams& p, const issgd::Matrix& x,
                                       std::span<const issgd::Label> y, double h) {
  auto flat = p.flatten();
  issgd::ModelParams q = p;
  std::vector<double> g(flat.size());
  for (std::size_t k = 0; k < flat.size(); ++k) {
    const double orig = flat[k];
    flat[k] = orig + h;
    q.assign_flat(flat);
    const double up = mean_loss(q, x, y);
    flat[k] = orig - h;
    q.assign_flat(flat);
    const double down = mean_loss(q, x, y);
    flat[k] = orig;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

struct Instance {
  issgd::ModelParams params;
  issgd::Matrix x;
  std::vector<issgd::Label> y;
};

// Random MLP with up to max_hidden layers of up to max_width units.
inline Instance random_instance(std::mt19937_64& rng, std::size_t batch, std::size_t max_hidden = 3,
                                std::size_t max_width = 64, std::size_t max_classes = 10) {
  std::uniform_int_distribution<std::size_t> depth(0, max_hidden);
  std::uniform_int_distribution<std::size_t> width(1, max_width);
  std::uniform_int_distribution<std::size_t> classes(2, max_classes);
  std::uniform_int_distribution<std::size_t> input(1, 16);
  std::vector<std::size_t> hidden(depth(rng));
  for (auto& h : hidden) h = width(rng);
  const std::size_t c = classes(rng);
  const std::size_t d = input(rng);
  Instance inst;
  inst.params = issgd::init_params(issgd::mlp_architecture(d, hidden, c), rng());
  // Nonzero biases so every parameter is exercised.
  std::normal_distribution<double> gauss(0.0, 0.3);
  for (auto& layer : inst.params.layers) {
    for (auto& b : layer.bias) b = gauss(rng);
  }
  inst.x = issgd::Matrix(batch, d);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (auto& v : inst.x.values()) v = unit(rng);
  std::uniform_int_distribution<issgd::Label> label(0, static_cast<issgd::Label>(c - 1));
  inst.y.resize(batch);
  for (auto& l : inst.y) l = label(rng);
  return inst;
}

inline double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

}  // namespace ref

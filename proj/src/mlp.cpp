#include "issgd/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace issgd {

std::vector<LayerSpec> mlp_architecture(std::size_t input_dim, std::span<const std::size_t> hidden,
                                        std::size_t num_classes) {
  if (input_dim == 0 || num_classes == 0) throw DimensionError("mlp_architecture: dims must be >= 1");
  std::vector<LayerSpec> specs;
  std::size_t in = input_dim;
  for (std::size_t h : hidden) {
    if (h == 0) throw DimensionError("mlp_architecture: hidden width must be >= 1");
    specs.push_back({in, h, Activation::relu});
    in = h;
  }
  specs.push_back({in, num_classes, Activation::softmax_output});
  return specs;
}

std::vector<LayerSpec> ModelParams::specs() const {
  std::vector<LayerSpec> out;
  out.reserve(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out.push_back({layers[l].weights.rows(), layers[l].weights.cols(),
                   l + 1 == layers.size() ? Activation::softmax_output : Activation::relu});
  }
  return out;
}

std::size_t ModelParams::input_dim() const { return layers.empty() ? 0 : layers.front().weights.rows(); }

std::size_t ModelParams::num_classes() const { return layers.empty() ? 0 : layers.back().weights.cols(); }

std::size_t ModelParams::num_params() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.weights.size() + layer.bias.size();
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(num_params());
  for (const auto& layer : layers) {
    auto w = layer.weights.values();
    flat.insert(flat.end(), w.begin(), w.end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

void ModelParams::assign_flat(std::span<const double> flat) {
  if (flat.size() != num_params()) {
    throw DimensionError(fmt::format("assign_flat: {} values for {} parameters", flat.size(), num_params()));
  }
  std::size_t pos = 0;
  for (auto& layer : layers) {
    auto w = layer.weights.values();
    std::copy_n(flat.begin() + pos, w.size(), w.begin());
    pos += w.size();
    std::copy_n(flat.begin() + pos, layer.bias.size(), layer.bias.begin());
    pos += layer.bias.size();
  }
}

void ModelParams::validate() const {
  if (layers.empty()) throw DimensionError("model has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weights.rows() == 0 || layer.weights.cols() == 0) {
      throw DimensionError(fmt::format("layer {} has an empty weight matrix", l));
    }
    if (layer.bias.size() != layer.weights.cols()) {
      throw DimensionError(fmt::format("layer {}: bias has {} entries, expected {}", l, layer.bias.size(),
                                       layer.weights.cols()));
    }
    if (l > 0 && layers[l - 1].weights.cols() != layer.weights.rows()) {
      throw DimensionError(fmt::format("layer {} input dim {} does not match previous output dim {}", l,
                                       layer.weights.rows(), layers[l - 1].weights.cols()));
    }
  }
}

ModelParams init_params(std::span<const LayerSpec> specs, std::uint64_t seed) {
  if (specs.empty()) throw DimensionError("init_params: no layers");
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const auto& s = specs[l];
    if (s.in_dim == 0 || s.out_dim == 0) throw DimensionError("init_params: dims must be >= 1");
    if (s.activation == Activation::softmax_output && l + 1 != specs.size()) {
      throw DimensionError("init_params: softmax output is only allowed on the final layer");
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(s.in_dim + s.out_dim));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Matrix(s.in_dim, s.out_dim), std::vector<double>(s.out_dim, 0.0)};
    for (double& w : layer.weights.values()) w = dist(rng);
    params.layers.push_back(std::move(layer));
  }
  params.validate();
  return params;
}

namespace {

Matrix affine(const Matrix& x, const DenseLayer& layer) {
  Matrix y = matmul(x, layer.weights);
  for (std::size_t n = 0; n < y.rows(); ++n) {
    auto row = y.row(n);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += layer.bias[j];
  }
  return y;
}

}  // namespace

ForwardCache forward(const ModelParams& params, const Matrix& x, std::span<const Label> labels) {
  params.validate();
  if (x.cols() != params.input_dim()) {
    throw DimensionError(fmt::format("forward: input has {} features, model expects {}", x.cols(), params.input_dim()));
  }
  if (labels.size() != x.rows()) {
    throw DimensionError(fmt::format("forward: {} labels for {} examples", labels.size(), x.rows()));
  }
  const std::size_t classes = params.num_classes();
  for (Label y : labels) {
    if (y >= classes) throw DimensionError(fmt::format("forward: label {} outside [0, {})", y, classes));
  }

  ForwardCache cache;
  cache.labels.assign(labels.begin(), labels.end());
  cache.inputs.reserve(params.layers.size());
  cache.inputs.push_back(x);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    Matrix y = affine(cache.inputs.back(), params.layers[l]);
    if (l + 1 == params.layers.size()) {
      cache.logits = std::move(y);
    } else {
      for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
      cache.inputs.push_back(std::move(y));
    }
  }
  if (!cache.logits.all_finite()) throw NumericError("forward: non-finite activations");

  const std::size_t n_rows = x.rows();
  cache.probs = Matrix(n_rows, classes);
  cache.losses.resize(n_rows);
  for (std::size_t n = 0; n < n_rows; ++n) {
    auto z = cache.logits.row(n);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    auto p = cache.probs.row(n);
    for (std::size_t k = 0; k < classes; ++k) {
      p[k] = std::exp(z[k] - zmax);
      sum += p[k];
    }
    for (double& v : p) v /= sum;
    cache.losses[n] = zmax + std::log(sum) - z[labels[n]];
  }
  return cache;
}

BackwardResult backward(const ModelParams& params, const ForwardCache& cache, std::span<const double> coefficients) {
  const std::size_t n_rows = cache.batch_size();
  if (coefficients.size() != n_rows) {
    throw DimensionError(fmt::format("backward: {} coefficients for batch of {}", coefficients.size(), n_rows));
  }
  const std::size_t n_layers = params.layers.size();
  if (cache.inputs.size() != n_layers) throw DimensionError("backward: cache does not match model depth");

  BackwardResult out;
  out.grads.resize(n_layers);
  out.deltas.resize(n_layers);

  Matrix delta = cache.probs;
  for (std::size_t n = 0; n < n_rows; ++n) {
    auto row = delta.row(n);
    row[cache.labels[n]] -= 1.0;
    for (double& v : row) v *= coefficients[n];
  }

  for (std::size_t l = n_layers; l-- > 0;) {
    const Matrix& x = cache.inputs[l];
    DenseLayer& g = out.grads[l];
    g.weights = matmul_at_b(x, delta);
    g.bias.assign(delta.cols(), 0.0);
    for (std::size_t n = 0; n < n_rows; ++n) {
      auto row = delta.row(n);
      for (std::size_t j = 0; j < row.size(); ++j) g.bias[j] += row[j];
    }
    if (l > 0) {
      Matrix prev = matmul_a_bt(delta, params.layers[l].weights);
      // x is the ReLU output of layer l-1; its derivative is 1 where x > 0, else 0.
      auto pv = prev.values();
      auto xv = x.values();
      for (std::size_t i = 0; i < pv.size(); ++i) {
        if (!(xv[i] > 0.0)) pv[i] = 0.0;
      }
      out.deltas[l] = std::move(delta);
      delta = std::move(prev);
    } else {
      out.deltas[l] = std::move(delta);
    }
  }
  return out;
}

std::vector<double> BackwardResult::flatten() const {
  std::vector<double> flat;
  for (const auto& g : grads) {
    auto w = g.weights.values();
    flat.insert(flat.end(), w.begin(), w.end());
    flat.insert(flat.end(), g.bias.begin(), g.bias.end());
  }
  return flat;
}

std::vector<double> per_example_grad_sq_norms(const ForwardCache& cache, const BackwardResult& back) {
  if (back.deltas.size() != cache.inputs.size()) {
    throw DimensionError("per_example_grad_sq_norms: cache and backward result disagree on depth");
  }
  std::vector<double> out(cache.batch_size(), 0.0);
  for (std::size_t l = 0; l < back.deltas.size(); ++l) {
    const auto x_sq = row_sq_norms(cache.inputs[l]);
    const auto d_sq = row_sq_norms(back.deltas[l]);
    if (x_sq.size() != out.size() || d_sq.size() != out.size()) {
      throw DimensionError("per_example_grad_sq_norms: batch size mismatch");
    }
    for (std::size_t n = 0; n < out.size(); ++n) out[n] += (x_sq[n] + 1.0) * d_sq[n];
  }
  return out;
}

std::vector<double> naive_per_example_norms(const ModelParams& params, const Matrix& x, std::span<const Label> labels) {
  if (labels.size() != x.rows()) throw DimensionError("naive_per_example_norms: label count mismatch");
  std::vector<double> out(x.rows());
  const double one = 1.0;
  for (std::size_t n = 0; n < x.rows(); ++n) {
    const std::size_t idx = n;
    Matrix xn = gather_rows(x, std::span<const std::size_t>(&idx, 1));
    auto cache = forward(params, xn, labels.subspan(n, 1));
    auto back = backward(params, cache, std::span<const double>(&one, 1));
    out[n] = sq_norm(back.flatten());
  }
  return out;
}

void sgd_update(ModelParams& params, const BackwardResult& back, double learning_rate) {
  if (back.grads.size() != params.layers.size()) throw DimensionError("sgd_update: gradient depth mismatch");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto w = params.layers[l].weights.values();
    auto gw = back.grads[l].weights.values();
    if (w.size() != gw.size()) throw DimensionError("sgd_update: gradient shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= learning_rate * gw[i];
    auto& b = params.layers[l].bias;
    const auto& gb = back.grads[l].bias;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= learning_rate * gb[i];
  }
}

Evaluation evaluate(const ModelParams& params, const Matrix& x, std::span<const Label> labels, std::size_t chunk) {
  if (labels.size() != x.rows()) throw DimensionError("evaluate: label count mismatch");
  Evaluation ev;
  if (x.rows() == 0) return ev;
  chunk = std::max<std::size_t>(chunk, 1);
  std::vector<std::size_t> idx;
  double loss_sum = 0.0;
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < x.rows(); start += chunk) {
    const std::size_t end = std::min(x.rows(), start + chunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    auto cache = forward(params, gather_rows(x, idx), labels.subspan(start, end - start));
    for (std::size_t n = 0; n < cache.batch_size(); ++n) {
      loss_sum += cache.losses[n];
      auto z = cache.logits.row(n);
      const auto best = static_cast<Label>(std::max_element(z.begin(), z.end()) - z.begin());
      if (best != cache.labels[n]) ++wrong;
    }
  }
  ev.mean_loss = loss_sum / static_cast<double>(x.rows());
  ev.error_rate = static_cast<double>(wrong) / static_cast<double>(x.rows());
  return ev;
}

}  // namespace issgd

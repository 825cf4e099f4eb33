#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "issgd/matrix.hpp"

namespace issgd {

using Label = std::uint32_t;

enum class Activation { relu, softmax_output };

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::relu;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Hidden ReLU layers followed by a softmax output layer.
std::vector<LayerSpec> mlp_architecture(std::size_t input_dim, std::span<const std::size_t> hidden,
                                        std::size_t num_classes);

// Y = X W + b, with W stored in_dim x out_dim.
struct DenseLayer {
  Matrix weights;
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Versioned parameter set. The flat layout is, per layer in order, W row-major then b.
struct ModelParams {
  std::uint64_t version = 0;
  std::vector<DenseLayer> layers;

  std::vector<LayerSpec> specs() const;
  std::size_t input_dim() const;
  std::size_t num_classes() const;
  std::size_t num_params() const;

  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  // Throws DimensionError if the layer shapes do not chain.
  void validate() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// W ~ U(-sqrt(6/(in+out)), +sqrt(6/(in+out))), b = 0.
ModelParams init_params(std::span<const LayerSpec> specs, std::uint64_t seed);

struct ForwardCache {
  // inputs[l] is the N x in_dim input of layer l.
  std::vector<Matrix> inputs;
  Matrix logits;
  Matrix probs;
  std::vector<Label> labels;
  // Softmax cross-entropy per example.
  std::vector<double> losses;

  std::size_t batch_size() const { return losses.size(); }
};

struct BackwardResult {
  std::vector<DenseLayer> grads;
  // deltas[l] = dL/dY_l, N x out_dim, already scaled by the per-example coefficients.
  std::vector<Matrix> deltas;

  std::vector<double> flatten() const;
};

ForwardCache forward(const ModelParams& params, const Matrix& x, std::span<const Label> labels);

// Gradient of L = sum_n c_n * loss_n.
BackwardResult backward(const ModelParams& params, const ForwardCache& cache, std::span<const double> coefficients);

// Squared L2 norm of each example's flattened parameter gradient:
//   sum_l (|X_l[n,:]|^2 + 1) * |D_l[n,:]|^2
// The deltas must come from a backward pass with every coefficient equal to 1.
std::vector<double> per_example_grad_sq_norms(const ForwardCache& cache, const BackwardResult& back);

// Reference: one batch-of-1 backward per example.
std::vector<double> naive_per_example_norms(const ModelParams& params, const Matrix& x, std::span<const Label> labels);

void sgd_update(ModelParams& params, const BackwardResult& back, double learning_rate);

struct Evaluation {
  double mean_loss = 0.0;
  double error_rate = 0.0;
};

Evaluation evaluate(const ModelParams& params, const Matrix& x, std::span<const Label> labels,
                    std::size_t chunk = 1024);

}  // namespace issgd

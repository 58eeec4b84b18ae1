#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace fedddl::numerics {

// Dense row-major tensor of 64-bit reals.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor vector(std::size_t n) { return Tensor({n}); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.size() > 1 ? shape_[1] : 1; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool all_finite() const;
  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Stacks equally sized rows into a [rows.size() x width] matrix.
Tensor stack_rows(std::span<const std::span<const double>> rows);

struct DenseLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  std::size_t in() const { return weight.cols(); }
  std::size_t out() const { return weight.rows(); }
  bool operator==(const DenseLayer&) const = default;
};

// Feature extractor layers followed by one classifier head. ReLU follows every
// extractor layer except the last one, whose output is the feature vector.
struct ModelParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.front().in(); }
  std::size_t feature_dim() const { return layers[layers.size() - 2].out(); }
  std::size_t class_count() const { return layers.back().out(); }
  std::size_t extractor_depth() const { return layers.size() - 1; }
  std::size_t parameter_count() const;

  // Throws ShapeMismatch / EmptyArchitecture when the layer chain is malformed.
  void validate() const;
  bool operator==(const ModelParams&) const = default;
};

struct Gradients {
  std::vector<DenseLayer> layers;

  static Gradients zeros_like(const ModelParams& params);
  void add(const Gradients& other);
  bool congruent_with(const ModelParams& params) const;
  bool operator==(const Gradients&) const = default;
};

struct ForwardOutput {
  Tensor features;  // [B x feature_dim]
  Tensor logits;    // [B x N]
};

// Per-layer values kept by forward_traced for backpropagation.
struct ForwardTrace {
  std::vector<Tensor> inputs;       // input to each layer
  std::vector<Tensor> pre_activations;  // affine output of each layer
  ForwardOutput output;
};

ForwardOutput forward(const ModelParams& params, const Tensor& batch);
ForwardTrace forward_traced(const ModelParams& params, const Tensor& batch);

struct LossAndGrad {
  double loss = 0.0;
  Tensor dlogits;
};

LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

// Row-wise softmax with max subtraction.
Tensor softmax(const Tensor& logits);

// Backpropagates an upstream gradient on logits and, optionally, an extra
// gradient injected directly at the feature layer.
Gradients backprop(const ModelParams& params, const ForwardTrace& trace, const Tensor& dlogits,
                   const Tensor* dfeatures);

struct BackwardResult {
  double loss = 0.0;
  Gradients grads;
};

BackwardResult backward(const ModelParams& params, const Tensor& batch, std::span<const int> labels,
                        const std::optional<Tensor>& aux_feature_grad = std::nullopt);

// theta <- theta - lr * (g + weight_decay * theta); biases are not decayed.
ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double lr, double weight_decay);
void sgd_step_inplace(ModelParams& params, const Gradients& grads, double lr, double weight_decay);

// Glorot-uniform weights in (-s, s), s = sqrt(6 / (in + out)); zero biases.
// layer_sizes = {input, hidden..., feature_dim, classes}.
ModelParams init_params(std::uint64_t seed, std::span<const std::size_t> layer_sizes);

}  // namespace fedddl::numerics

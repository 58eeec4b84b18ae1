#include "numerics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "error.hpp"
#include "rng.hpp"

namespace fedddl::numerics {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// out[b][o] = sum_i x[b][i] * w[o][i] + bias[o], summed left to right.
Tensor affine(const Tensor& x, const DenseLayer& layer) {
  const std::size_t batch = x.rows();
  const std::size_t in = layer.in();
  const std::size_t out = layer.out();
  Tensor y = Tensor::matrix(batch, out);
  for (std::size_t b = 0; b < batch; ++b) {
    auto xr = x.row(b);
    auto yr = y.row(b);
    for (std::size_t o = 0; o < out; ++o) {
      auto wr = layer.weight.row(o);
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      yr[o] = acc + layer.bias[o];
    }
  }
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

void check_batch(const ModelParams& params, const Tensor& batch) {
  params.validate();
  if (batch.rank() != 2 || batch.rows() == 0) {
    throw Error(ErrorCode::ShapeMismatch, "batch must be a non-empty [B x D] matrix, got " +
                                              shape_string(batch.shape()));
  }
  if (batch.cols() != params.input_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "batch width " + std::to_string(batch.cols()) +
                                              " != model input " + std::to_string(params.input_dim()));
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)), data_(product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw Error(ErrorCode::ShapeMismatch, "shape " + shape_string(shape_) + " does not hold " +
                                              std::to_string(data_.size()) + " elements");
  }
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor stack_rows(std::span<const std::span<const double>> rows) {
  if (rows.empty()) return Tensor::matrix(0, 0);
  const std::size_t width = rows.front().size();
  Tensor out = Tensor::matrix(rows.size(), width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != width) throw Error(ErrorCode::ShapeMismatch, "ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), out.row(r).begin());
  }
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void ModelParams::validate() const {
  if (layers.size() < 2) {
    throw Error(ErrorCode::EmptyArchitecture, "need at least one extractor layer and a head");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.weight.rank() != 2 || layer.bias.rank() != 1 || layer.bias.size() != layer.out()) {
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " has weight " +
                                                shape_string(layer.weight.shape()) + " and bias " +
                                                shape_string(layer.bias.shape()));
    }
    if (l > 0 && layer.in() != layers[l - 1].out()) {
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " input " +
                                                std::to_string(layer.in()) + " != previous output " +
                                                std::to_string(layers[l - 1].out()));
    }
  }
}

Gradients Gradients::zeros_like(const ModelParams& params) {
  Gradients g;
  g.layers.reserve(params.layers.size());
  for (const auto& l : params.layers) {
    g.layers.push_back({Tensor(l.weight.shape()), Tensor(l.bias.shape())});
  }
  return g;
}

void Gradients::add(const Gradients& other) {
  if (other.layers.size() != layers.size()) throw Error(ErrorCode::ShapeMismatch, "gradient depth");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& a = layers[l];
    const auto& b = other.layers[l];
    if (a.weight.shape() != b.weight.shape() || a.bias.shape() != b.bias.shape()) {
      throw Error(ErrorCode::ShapeMismatch, "gradient layer " + std::to_string(l));
    }
    for (std::size_t i = 0; i < a.weight.size(); ++i) a.weight[i] += b.weight[i];
    for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += b.bias[i];
  }
}

bool Gradients::congruent_with(const ModelParams& params) const {
  if (layers.size() != params.layers.size()) return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].weight.shape() != params.layers[l].weight.shape() ||
        layers[l].bias.shape() != params.layers[l].bias.shape()) {
      return false;
    }
  }
  return true;
}

ForwardTrace forward_traced(const ModelParams& params, const Tensor& batch) {
  check_batch(params, batch);
  ForwardTrace trace;
  const std::size_t depth = params.layers.size();
  trace.inputs.reserve(depth);
  trace.pre_activations.reserve(depth);
  Tensor x = batch;
  for (std::size_t l = 0; l < depth; ++l) {
    trace.inputs.push_back(x);
    Tensor z = affine(x, params.layers[l]);
    const bool hidden = l + 2 < depth;
    x = hidden ? relu(z) : z;
    trace.pre_activations.push_back(std::move(z));
  }
  trace.output.features = trace.pre_activations[depth - 2];
  trace.output.logits = trace.pre_activations[depth - 1];
  return trace;
}

ForwardOutput forward(const ModelParams& params, const Tensor& batch) {
  return std::move(forward_traced(params, batch).output);
}

Tensor softmax(const Tensor& logits) {
  Tensor p = logits;
  for (std::size_t b = 0; b < p.rows(); ++b) {
    auto r = p.row(b);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : r) v /= sum;
  }
  return p;
}

LossAndGrad softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.rows() != labels.size() || logits.rows() == 0) {
    throw Error(ErrorCode::ShapeMismatch, "logits rows must match label count");
  }
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  LossAndGrad out;
  out.dlogits = Tensor::matrix(batch, classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(y) + " not in [0, " +
                                                  std::to_string(classes) + ")");
    }
    auto z = logits.row(b);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    const double log_norm = mx + std::log(sum);
    total += log_norm - z[static_cast<std::size_t>(y)];
    auto d = out.dlogits.row(b);
    for (std::size_t c = 0; c < classes; ++c) {
      d[c] = std::exp(z[c] - log_norm) / static_cast<double>(batch);
    }
    d[static_cast<std::size_t>(y)] -= 1.0 / static_cast<double>(batch);
  }
  out.loss = total / static_cast<double>(batch);
  return out;
}

Gradients backprop(const ModelParams& params, const ForwardTrace& trace, const Tensor& dlogits,
                   const Tensor* dfeatures) {
  const std::size_t depth = params.layers.size();
  const std::size_t batch = trace.inputs.front().rows();
  if (dlogits.rows() != batch || dlogits.cols() != params.class_count()) {
    throw Error(ErrorCode::ShapeMismatch, "dlogits shape");
  }
  if (dfeatures && (dfeatures->rows() != batch || dfeatures->cols() != params.feature_dim())) {
    throw Error(ErrorCode::ShapeMismatch, "aux feature gradient must be [B x feature_dim]");
  }
  Gradients grads = Gradients::zeros_like(params);
  Tensor delta = dlogits;  // gradient w.r.t. the pre-activation of layer l
  for (std::size_t l = depth; l-- > 0;) {
    const DenseLayer& layer = params.layers[l];
    DenseLayer& g = grads.layers[l];
    const Tensor& x = trace.inputs[l];
    const std::size_t in = layer.in();
    const std::size_t out = layer.out();
    for (std::size_t b = 0; b < batch; ++b) {
      auto dr = delta.row(b);
      auto xr = x.row(b);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dr[o];
        g.bias[o] += d;
        auto gw = g.weight.row(o);
        for (std::size_t i = 0; i < in; ++i) gw[i] += d * xr[i];
      }
    }
    if (l == 0) break;
    Tensor dx = Tensor::matrix(batch, in);
    for (std::size_t b = 0; b < batch; ++b) {
      auto dr = delta.row(b);
      auto dxr = dx.row(b);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = dr[o];
        auto wr = layer.weight.row(o);
        for (std::size_t i = 0; i < in; ++i) dxr[i] += d * wr[i];
      }
    }
    if (l == depth - 1) {
      // dx is now the gradient at the feature layer (no activation).
      if (dfeatures) {
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += (*dfeatures)[i];
      }
    } else {
      const Tensor& z = trace.pre_activations[l - 1];
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (!(z[i] > 0.0)) dx[i] = 0.0;
      }
    }
    delta = std::move(dx);
  }
  return grads;
}

BackwardResult backward(const ModelParams& params, const Tensor& batch, std::span<const int> labels,
                        const std::optional<Tensor>& aux_feature_grad) {
  ForwardTrace trace = forward_traced(params, batch);
  LossAndGrad ce = softmax_cross_entropy(trace.output.logits, labels);
  BackwardResult result;
  result.loss = ce.loss;
  result.grads = backprop(params, trace, ce.dlogits, aux_feature_grad ? &*aux_feature_grad : nullptr);
  return result;
}

void sgd_step_inplace(ModelParams& params, const Gradients& grads, double lr, double weight_decay) {
  if (!grads.congruent_with(params)) throw Error(ErrorCode::ShapeMismatch, "gradients vs params");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& p = params.layers[l];
    const auto& g = grads.layers[l];
    for (std::size_t i = 0; i < p.weight.size(); ++i) {
      p.weight[i] -= lr * (g.weight[i] + weight_decay * p.weight[i]);
    }
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] -= lr * g.bias[i];
  }
}

ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double lr, double weight_decay) {
  ModelParams next = params;
  sgd_step_inplace(next, grads, lr, weight_decay);
  return next;
}

ModelParams init_params(std::uint64_t seed, std::span<const std::size_t> layer_sizes) {
  if (layer_sizes.size() < 3) {
    throw Error(ErrorCode::EmptyArchitecture,
                "layer sizes must list input, feature and class extents (got " +
                    std::to_string(layer_sizes.size()) + ")");
  }
  for (std::size_t s : layer_sizes) {
    if (s == 0) throw Error(ErrorCode::EmptyArchitecture, "zero-width layer");
  }
  Rng rng(seed);
  ModelParams params;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const std::size_t in = layer_sizes[l];
    const std::size_t out = layer_sizes[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    DenseLayer layer{Tensor::matrix(out, in), Tensor::vector(out)};
    for (double& w : layer.weight.data()) w = bound * (2.0 * rng.uniform() - 1.0);
    params.layers.push_back(std::move(layer));
  }
  return params;
}

}  // namespace fedddl::numerics

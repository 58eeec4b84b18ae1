#include "debias.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "error.hpp"

namespace fedddl::debias {

namespace {

constexpr double kNormFloor = 1e-12;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

}  // namespace

const std::vector<double>* PrototypeBank::find(int cls) const {
  auto it = prototypes.find(cls);
  return it == prototypes.end() ? nullptr : &it->second;
}

std::optional<std::vector<double>> normalized(std::span<const double> v) {
  const double n = norm(v);
  if (!(n > kNormFloor)) return std::nullopt;
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

std::map<int, std::vector<double>> class_feature_means(const ModelParams& params,
                                                       const std::map<int, std::vector<Tensor>>& images) {
  std::map<int, std::vector<double>> means;
  for (const auto& [cls, list] : images) {
    if (list.empty()) continue;
    std::vector<std::span<const double>> rows;
    rows.reserve(list.size());
    for (const Tensor& img : list) rows.push_back(img.data());
    const Tensor feats = numerics::forward(params, numerics::stack_rows(rows)).features;
    std::vector<double> mean(feats.cols(), 0.0);
    for (std::size_t r = 0; r < feats.rows(); ++r) {
      auto fr = feats.row(r);
      for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += fr[c];
    }
    for (double& m : mean) m /= static_cast<double>(feats.rows());
    means.emplace(cls, std::move(mean));
  }
  return means;
}

PrototypeBank local_prototypes(const ModelParams& global_params,
                               const std::map<int, std::vector<Tensor>>& images, int client,
                               std::size_t round) {
  PrototypeBank bank;
  bank.scope = BankScope::Local;
  bank.client = client;
  bank.round = round;
  bank.feature_dim = global_params.feature_dim();
  for (auto& [cls, mean] : class_feature_means(global_params, images)) {
    if (auto unit = normalized(mean)) bank.prototypes.emplace(cls, std::move(*unit));
  }
  return bank;
}

PrototypeBank aggregate_prototypes(std::span<const PrototypeBank> banks) {
  PrototypeBank global;
  global.scope = BankScope::Global;
  if (banks.empty()) return global;
  global.round = banks.front().round;
  global.feature_dim = banks.front().feature_dim;
  std::map<int, std::pair<std::vector<double>, std::size_t>> sums;
  for (const auto& bank : banks) {
    if (bank.feature_dim != global.feature_dim) {
      throw Error(ErrorCode::ShapeMismatch, "prototype banks disagree on feature_dim");
    }
    for (const auto& [cls, proto] : bank.prototypes) {
      auto& [sum, count] = sums[cls];
      if (sum.empty()) sum.assign(proto.size(), 0.0);
      for (std::size_t i = 0; i < proto.size(); ++i) sum[i] += proto[i];
      ++count;
    }
  }
  for (auto& [cls, entry] : sums) {
    auto& [sum, count] = entry;
    // A class held by a single bank keeps that prototype as is.
    if (count == 1) {
      global.prototypes.emplace(cls, std::move(sum));
      continue;
    }
    for (double& v : sum) v /= static_cast<double>(count);
    if (auto unit = normalized(sum)) global.prototypes.emplace(cls, std::move(*unit));
  }
  return global;
}

ContrastiveResult contrastive_loss(const Tensor& features, std::span<const int> labels,
                                   const PrototypeBank& bank, double tau) {
  if (!(tau > 0.0)) {
    throw Error(ErrorCode::TemperatureNonPositive, "tau must be > 0, got " + std::to_string(tau));
  }
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "features rows must match label count");
  }
  const std::size_t dim = features.cols();
  if (!bank.prototypes.empty() && bank.feature_dim != dim) {
    throw Error(ErrorCode::ShapeMismatch, "bank feature_dim " + std::to_string(bank.feature_dim) +
                                              " != features " + std::to_string(dim));
  }
  ContrastiveResult result{0.0, Tensor::matrix(features.rows(), dim), 0};

  std::vector<int> classes;
  std::vector<std::span<const double>> protos;
  for (const auto& [cls, p] : bank.prototypes) {
    classes.push_back(cls);
    protos.emplace_back(p);
  }
  std::vector<double> logits(classes.size());
  std::vector<double> unit(dim);
  std::vector<double> dunit(dim);

  for (std::size_t b = 0; b < features.rows(); ++b) {
    auto pos_it = std::find(classes.begin(), classes.end(), labels[b]);
    if (pos_it == classes.end()) continue;
    const std::size_t pos = static_cast<std::size_t>(pos_it - classes.begin());
    ++result.counted;

    auto f = features.row(b);
    const double n = std::max(norm(f), kNormFloor);
    for (std::size_t i = 0; i < dim; ++i) unit[i] = f[i] / n;

    double mx = -INFINITY;
    for (std::size_t j = 0; j < classes.size(); ++j) {
      logits[j] = dot(unit, protos[j]) / tau;
      mx = std::max(mx, logits[j]);
    }
    double z = 0.0;
    for (double s : logits) z += std::exp(s - mx);
    const double log_z = mx + std::log(z);
    result.loss += log_z - logits[pos];

    // d loss / d unit = sum_j (p_j - [j == pos]) * proto_j / tau
    std::fill(dunit.begin(), dunit.end(), 0.0);
    for (std::size_t j = 0; j < classes.size(); ++j) {
      const double w = (std::exp(logits[j] - log_z) - (j == pos ? 1.0 : 0.0)) / tau;
      for (std::size_t i = 0; i < dim; ++i) dunit[i] += w * protos[j][i];
    }
    // Project through the normalization: (I - u u^T) / |f|.
    const double along = dot(unit, dunit);
    auto out = result.dfeatures.row(b);
    for (std::size_t i = 0; i < dim; ++i) out[i] = (dunit[i] - along * unit[i]) / n;
  }

  if (result.counted > 0) {
    const double scale = 1.0 / static_cast<double>(result.counted);
    result.loss *= scale;
    for (double& v : result.dfeatures.data()) v *= scale;
  }
  return result;
}

}  // namespace fedddl::debias

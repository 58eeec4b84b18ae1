#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "numerics.hpp"

namespace fedddl::debias {

using numerics::ModelParams;
using numerics::Tensor;

enum class BankScope { Local, Global };

// Per-class unit-norm feature prototypes. Classes without data are absent.
struct PrototypeBank {
  BankScope scope = BankScope::Local;
  int client = -1;  // owning client for local banks
  std::size_t round = 0;
  std::size_t feature_dim = 0;
  std::map<int, std::vector<double>> prototypes;

  bool has(int cls) const { return prototypes.count(cls) != 0; }
  const std::vector<double>* find(int cls) const;
  bool operator==(const PrototypeBank&) const = default;
};

// Mean extractor feature per class, before normalization.
std::map<int, std::vector<double>> class_feature_means(const ModelParams& params,
                                                       const std::map<int, std::vector<Tensor>>& images);

// images: class -> object images ([H x W] each) of one client.
PrototypeBank local_prototypes(const ModelParams& global_params,
                               const std::map<int, std::vector<Tensor>>& images, int client = -1,
                               std::size_t round = 0);

// Per class: mean over the banks holding that class, then re-normalized.
PrototypeBank aggregate_prototypes(std::span<const PrototypeBank> banks);

struct ContrastiveResult {
  double loss = 0.0;
  Tensor dfeatures;       // [B x feature_dim]
  std::size_t counted = 0;  // samples whose class had a prototype
};

// Prototype contrastive regularizer on L2-normalized features; the loss is the
// mean over counted samples and dfeatures is its exact gradient.
ContrastiveResult contrastive_loss(const Tensor& features, std::span<const int> labels,
                                   const PrototypeBank& bank, double tau);

// v / max(|v|, 1e-12); nullopt when |v| is numerically zero.
std::optional<std::vector<double>> normalized(std::span<const double> v);

}  // namespace fedddl::debias

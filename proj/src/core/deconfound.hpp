#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "numerics.hpp"
#include "scenegen.hpp"

namespace fedddl::deconfound {

using numerics::ModelParams;
using numerics::Tensor;

// Inclusive pixel box: columns [x_min, x_max], rows [y_min, y_max].
struct BBox {
  std::size_t x_min = 0;
  std::size_t x_max = 0;
  std::size_t y_min = 0;
  std::size_t y_max = 0;

  std::size_t width() const { return x_max - x_min + 1; }
  std::size_t height() const { return y_max - y_min + 1; }
  bool contains(std::size_t x, std::size_t y) const {
    return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
  }
  bool operator==(const BBox&) const = default;
};

struct Decomposition {
  Tensor object;      // image inside the box, zero elsewhere
  Tensor background;  // image outside the box, zero inside
  BBox box;
  int label = 0;
};

struct BackgroundGroup {
  int class_id = 0;
  std::size_t index = 0;
  std::vector<Tensor> members;
};

enum class Transform { Identity, Rot90, Rot180, Rot270, HFlip, VFlip, ScaleHalf };

inline constexpr std::array<Transform, 7> kAllTransforms = {
    Transform::Identity, Transform::Rot90, Transform::Rot180,   Transform::Rot270,
    Transform::HFlip,    Transform::VFlip, Transform::ScaleHalf};

std::string_view to_string(Transform t);
// Returns false when the name is unknown.
bool parse_transform(std::string_view name, Transform& out);

struct PlacedObject {
  Tensor pixels;   // [H x W], transformed crop at its new position, zero elsewhere
  Tensor support;  // [H x W], 1 where a pasted pixel is >= 0.5
};

struct CounterfactualSample {
  Tensor pixels;
  int label = 0;
  // Provenance, kept for diagnostics; never used for training.
  int background_class = 0;
  std::size_t group_index = 0;
  Transform transform = Transform::Identity;
};

struct CounterfactualSet {
  std::vector<CounterfactualSample> samples;
};

struct CounterfactualOptions {
  std::size_t eta = 3;
  std::size_t count_per_object = 1;
  std::vector<Transform> transforms{kAllTransforms.begin(), kAllTransforms.end()};
};

// Tightest box around mask == 1 pixels; NoObject when the mask is empty.
BBox detect_box(const Tensor& mask);

Decomposition decompose(const Tensor& image, const BBox& box, int label = 0);
Decomposition decompose(const scenegen::Scene& scene);

// Seeded permutation dealt round-robin into min(eta, count) groups.
std::vector<BackgroundGroup> split_backgrounds(std::span<const Tensor> backgrounds, int class_id,
                                               std::size_t eta, std::uint64_t seed);

// Applies a transform to a crop ([h x w] matrix); rotations are clockwise.
Tensor transform_crop(const Tensor& crop, Transform op);

PlacedObject transform_object(const Tensor& object, const BBox& box, Transform op, std::uint64_t seed);

Tensor group_mean(const BackgroundGroup& group);
Tensor compose_counterfactual(const Tensor& base, const PlacedObject& object);
Tensor compose_counterfactual(const BackgroundGroup& group, const PlacedObject& object);

CounterfactualSet build_counterfactual_set(std::span<const Decomposition> decompositions,
                                           const CounterfactualOptions& options, std::uint64_t seed);

struct JointLoss {
  double loss = 0.0;
  numerics::Gradients grads;
};

// CE on the original batch plus CE on the counterfactual batch.
JointLoss joint_loss(const ModelParams& params, const Tensor& original, std::span<const int> labels,
                     const Tensor& counterfactual, std::span<const int> counterfactual_labels);

}  // namespace fedddl::deconfound

#include "deconfound.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <string>

#include "error.hpp"
#include "rng.hpp"

namespace fedddl::deconfound {

namespace {

constexpr std::uint64_t kTagGroups = 11;
constexpr std::uint64_t kTagDraws = 12;

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) throw Error(ErrorCode::ShapeMismatch, std::string(what) + " must be a matrix");
}

}  // namespace

std::string_view to_string(Transform t) {
  switch (t) {
    case Transform::Identity: return "identity";
    case Transform::Rot90: return "rot90";
    case Transform::Rot180: return "rot180";
    case Transform::Rot270: return "rot270";
    case Transform::HFlip: return "hflip";
    case Transform::VFlip: return "vflip";
    case Transform::ScaleHalf: return "scale_half";
  }
  return "identity";
}

bool parse_transform(std::string_view name, Transform& out) {
  for (Transform t : kAllTransforms) {
    if (to_string(t) == name) {
      out = t;
      return true;
    }
  }
  return false;
}

BBox detect_box(const Tensor& mask) {
  require_matrix(mask, "mask");
  bool found = false;
  BBox box;
  for (std::size_t y = 0; y < mask.rows(); ++y) {
    for (std::size_t x = 0; x < mask.cols(); ++x) {
      if (mask.at(y, x) == 0.0) continue;
      if (!found) {
        box = {x, x, y, y};
        found = true;
        continue;
      }
      box.x_min = std::min(box.x_min, x);
      box.x_max = std::max(box.x_max, x);
      box.y_min = std::min(box.y_min, y);
      box.y_max = std::max(box.y_max, y);
    }
  }
  if (!found) throw Error(ErrorCode::NoObject, "mask has no object pixel");
  return box;
}

Decomposition decompose(const Tensor& image, const BBox& box, int label) {
  require_matrix(image, "image");
  if (box.x_min > box.x_max || box.y_min > box.y_max || box.x_max >= image.cols() ||
      box.y_max >= image.rows()) {
    throw Error(ErrorCode::BoxOutOfBounds,
                "box x[" + std::to_string(box.x_min) + "," + std::to_string(box.x_max) + "] y[" +
                    std::to_string(box.y_min) + "," + std::to_string(box.y_max) + "] outside " +
                    std::to_string(image.rows()) + "x" + std::to_string(image.cols()));
  }
  Decomposition d{Tensor(image.shape()), Tensor(image.shape()), box, label};
  for (std::size_t y = 0; y < image.rows(); ++y) {
    for (std::size_t x = 0; x < image.cols(); ++x) {
      (box.contains(x, y) ? d.object : d.background).at(y, x) = image.at(y, x);
    }
  }
  return d;
}

Decomposition decompose(const scenegen::Scene& scene) {
  return decompose(scene.pixels, detect_box(scene.mask), scene.label);
}

std::vector<BackgroundGroup> split_backgrounds(std::span<const Tensor> backgrounds, int class_id,
                                               std::size_t eta, std::uint64_t seed) {
  std::vector<BackgroundGroup> groups;
  if (backgrounds.empty()) return groups;
  const std::size_t count = std::clamp<std::size_t>(eta, 1, backgrounds.size());
  std::vector<std::size_t> order(backgrounds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  groups.resize(count);
  for (std::size_t j = 0; j < count; ++j) {
    groups[j].class_id = class_id;
    groups[j].index = j;
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    groups[i % count].members.push_back(backgrounds[order[i]]);
  }
  return groups;
}

Tensor transform_crop(const Tensor& crop, Transform op) {
  require_matrix(crop, "crop");
  const std::size_t h = crop.rows();
  const std::size_t w = crop.cols();
  switch (op) {
    case Transform::Identity: return crop;
    case Transform::Rot90: {
      Tensor out = Tensor::matrix(w, h);
      for (std::size_t r = 0; r < w; ++r)
        for (std::size_t c = 0; c < h; ++c) out.at(r, c) = crop.at(h - 1 - c, r);
      return out;
    }
    case Transform::Rot180: {
      Tensor out = Tensor::matrix(h, w);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) out.at(r, c) = crop.at(h - 1 - r, w - 1 - c);
      return out;
    }
    case Transform::Rot270: {
      Tensor out = Tensor::matrix(w, h);
      for (std::size_t r = 0; r < w; ++r)
        for (std::size_t c = 0; c < h; ++c) out.at(r, c) = crop.at(c, w - 1 - r);
      return out;
    }
    case Transform::HFlip: {
      Tensor out = Tensor::matrix(h, w);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) out.at(r, c) = crop.at(r, w - 1 - c);
      return out;
    }
    case Transform::VFlip: {
      Tensor out = Tensor::matrix(h, w);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) out.at(r, c) = crop.at(h - 1 - r, c);
      return out;
    }
    case Transform::ScaleHalf: {
      // Nearest neighbour onto ceil(side / 2).
      const std::size_t nh = (h + 1) / 2;
      const std::size_t nw = (w + 1) / 2;
      Tensor out = Tensor::matrix(nh, nw);
      for (std::size_t r = 0; r < nh; ++r) {
        const std::size_t sr = std::min(h - 1, (2 * r + 1) * h / (2 * nh));
        for (std::size_t c = 0; c < nw; ++c) {
          const std::size_t sc = std::min(w - 1, (2 * c + 1) * w / (2 * nw));
          out.at(r, c) = crop.at(sr, sc);
        }
      }
      return out;
    }
  }
  return crop;
}

PlacedObject transform_object(const Tensor& object, const BBox& box, Transform op, std::uint64_t seed) {
  require_matrix(object, "object");
  const std::size_t height = object.rows();
  const std::size_t width = object.cols();
  if (box.x_max >= width || box.y_max >= height || box.x_min > box.x_max || box.y_min > box.y_max) {
    throw Error(ErrorCode::BoxOutOfBounds, "object box outside frame");
  }
  Tensor crop = Tensor::matrix(box.height(), box.width());
  for (std::size_t r = 0; r < crop.rows(); ++r)
    for (std::size_t c = 0; c < crop.cols(); ++c) crop.at(r, c) = object.at(box.y_min + r, box.x_min + c);
  Tensor moved = transform_crop(crop, op);
  if (moved.rows() > height || moved.cols() > width) {
    throw Error(ErrorCode::ObjectTooLarge, "transformed crop " + std::to_string(moved.rows()) + "x" +
                                               std::to_string(moved.cols()) + " exceeds frame");
  }
  Rng rng(seed);
  const std::size_t top = static_cast<std::size_t>(rng.below(height - moved.rows() + 1));
  const std::size_t left = static_cast<std::size_t>(rng.below(width - moved.cols() + 1));
  PlacedObject placed{Tensor::matrix(height, width), Tensor::matrix(height, width)};
  for (std::size_t r = 0; r < moved.rows(); ++r) {
    for (std::size_t c = 0; c < moved.cols(); ++c) {
      const double v = moved.at(r, c);
      placed.pixels.at(top + r, left + c) = v;
      if (v >= scenegen::kObjectMin) placed.support.at(top + r, left + c) = 1.0;
    }
  }
  return placed;
}

Tensor group_mean(const BackgroundGroup& group) {
  if (group.members.empty()) throw Error(ErrorCode::ShapeMismatch, "empty background group");
  Tensor base(group.members.front().shape());
  for (const Tensor& m : group.members) {
    if (m.shape() != base.shape()) throw Error(ErrorCode::ShapeMismatch, "group members differ in shape");
    for (std::size_t i = 0; i < base.size(); ++i) base[i] += m[i];
  }
  const double n = static_cast<double>(group.members.size());
  for (double& v : base.data()) v /= n;
  return base;
}

Tensor compose_counterfactual(const Tensor& base, const PlacedObject& object) {
  if (base.shape() != object.pixels.shape() || base.shape() != object.support.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "background base and object differ in shape");
  }
  Tensor out = base;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (object.support[i] != 0.0) out[i] = object.pixels[i];
  }
  return out;
}

Tensor compose_counterfactual(const BackgroundGroup& group, const PlacedObject& object) {
  return compose_counterfactual(group_mean(group), object);
}

CounterfactualSet build_counterfactual_set(std::span<const Decomposition> decompositions,
                                           const CounterfactualOptions& options, std::uint64_t seed) {
  CounterfactualSet set;
  if (decompositions.empty() || options.count_per_object == 0) return set;
  if (options.transforms.empty()) throw Error(ErrorCode::InvalidConfig, "transforms: empty set");

  std::map<int, std::vector<Tensor>> by_class;
  for (const auto& d : decompositions) by_class[d.label].push_back(d.background);

  struct PooledGroup {
    int class_id;
    std::size_t index;
    Tensor mean;
  };
  std::vector<PooledGroup> pool;
  for (const auto& [cls, backgrounds] : by_class) {
    auto groups = split_backgrounds(backgrounds, cls, options.eta,
                                    derive_seed(seed, {kTagGroups, static_cast<std::uint64_t>(cls)}));
    for (const auto& g : groups) pool.push_back({g.class_id, g.index, group_mean(g)});
  }

  Rng rng(derive_seed(seed, {kTagDraws}));
  set.samples.reserve(decompositions.size() * options.count_per_object);
  for (const auto& d : decompositions) {
    for (std::size_t n = 0; n < options.count_per_object; ++n) {
      const PooledGroup& g = pool[static_cast<std::size_t>(rng.below(pool.size()))];
      const Transform op = options.transforms[static_cast<std::size_t>(rng.below(options.transforms.size()))];
      PlacedObject placed = transform_object(d.object, d.box, op, rng.next());
      set.samples.push_back({compose_counterfactual(g.mean, placed), d.label, g.class_id, g.index, op});
    }
  }
  return set;
}

JointLoss joint_loss(const ModelParams& params, const Tensor& original, std::span<const int> labels,
                     const Tensor& counterfactual, std::span<const int> counterfactual_labels) {
  auto a = numerics::backward(params, original, labels);
  auto b = numerics::backward(params, counterfactual, counterfactual_labels);
  a.grads.add(b.grads);
  return {a.loss + b.loss, std::move(a.grads)};
}

}  // namespace fedddl::deconfound

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "numerics.hpp"

namespace fedddl::scenegen {

using numerics::Tensor;

inline constexpr std::size_t kGlyphCount = 10;
inline constexpr std::size_t kTextureCount = 10;

// Pixel bands the generator guarantees.
inline constexpr double kObjectMin = 0.5;
inline constexpr double kBackgroundMax = 0.4;

struct Scene {
  Tensor pixels;  // [H x W], values in [0, 1]
  int label = 0;
  Tensor mask;    // [H x W], 1 on object pixels
  int bg_family = 0;
};

struct DatasetSpec {
  std::uint64_t seed = 1;
  std::size_t clients = 4;
  std::size_t classes = 5;
  std::size_t families = 10;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t per_client_count = 600;
  std::size_t test_count = 500;
  double rho = 0.9;
  std::size_t train_family_count = 7;

  // Throws InvalidSpec naming the offending field.
  void validate() const;
};

struct FederatedDataset {
  DatasetSpec spec;
  std::vector<std::vector<Scene>> clients;
  std::vector<Scene> test;
  std::vector<int> train_families;
  std::vector<int> test_families;
  // assignment[k][i]: the dominant background family of class i on client k.
  std::vector<std::vector<int>> assignment;
};

FederatedDataset generate(const DatasetSpec& spec);

// Individual rendering pieces, exposed for tests and tooling.
bool glyph_pixel(std::size_t glyph, std::size_t side, std::size_t r, std::size_t c);
// Mean shade of a background family, in [0.08, 0.32].
double family_level(std::size_t family, std::size_t train_family_count);
Tensor render_background(std::size_t family, std::size_t train_family_count, std::size_t height,
                         std::size_t width, std::uint64_t seed);

struct Batch {
  Tensor inputs;  // [B x H*W]
  std::vector<int> labels;
};

// Deterministic shuffle keyed by (seed, epoch); the final short batch is kept.
std::vector<Batch> batches(std::span<const Scene> scenes, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t epoch);

// Index order used by batches(); exposed so the permutation can be inspected.
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::uint64_t epoch);

// Flattens the given scenes into an [n x H*W] matrix.
Tensor flatten(std::span<const Scene> scenes);
std::vector<int> labels_of(std::span<const Scene> scenes);

}  // namespace fedddl::scenegen

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "numerics.hpp"
#include "scenegen.hpp"

namespace fedddl::harness {

inline constexpr std::uint32_t kFormatVersion = 1;

struct SplitHeader {
  std::uint32_t classes = 0;
  std::uint32_t families = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t count = 0;
};

// Little-endian split file: "FDDL", version, N, B, H, W, count, then per scene
// label u16, bg_family u16, H*W float32 pixels, ceil(H*W/8) mask bytes (LSB first).
void write_split(const std::string& path, const SplitHeader& header, std::span<const scenegen::Scene> scenes);
std::vector<scenegen::Scene> read_split(const std::string& path, SplitHeader* header = nullptr);

// Writes client_<k>.bin for every client, test.bin and manifest.json.
void write_dataset(const std::string& dir, const scenegen::FederatedDataset& dataset);
scenegen::FederatedDataset read_dataset(const std::string& dir);

// Little-endian checkpoint: "FDDM", version, layer count, then per layer
// out u32, in u32, out*in float64 weights (row-major), out float64 biases.
void write_model(const std::string& path, const numerics::ModelParams& params);
numerics::ModelParams read_model(const std::string& path);

void write_text(const std::string& path, const std::string& text);

}  // namespace fedddl::harness

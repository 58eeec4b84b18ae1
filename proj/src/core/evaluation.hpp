#pragma once

#include <span>
#include <vector>

#include "numerics.hpp"
#include "scenegen.hpp"

namespace fedddl::harness {

// Fraction of argmax-correct predictions; ties go to the lowest class id.
double top1_accuracy(const numerics::ModelParams& params, std::span<const scenegen::Scene> scenes);

std::vector<int> predict(const numerics::ModelParams& params, const numerics::Tensor& inputs);

struct FamilyProbe {
  int family = 0;
  std::size_t count = 0;
  std::vector<double> mean_probs;         // average softmax over this family's probes
  std::vector<std::size_t> argmax_counts; // predicted class histogram
};

struct ProbeResult {
  double assoc_score = 0.0;  // mean of (max softmax - 1/N); 0 means no background signal
  std::vector<FamilyProbe> families;
};

// Zeroes object pixels of each scene and measures how confidently the model
// still assigns the remaining background to some class.
ProbeResult background_probe(const numerics::ModelParams& params, std::span<const scenegen::Scene> scenes);

}  // namespace fedddl::harness

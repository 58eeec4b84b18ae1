#include "evaluation.hpp"

#include <algorithm>
#include <map>

#include "error.hpp"

namespace fedddl::harness {

std::vector<int> predict(const numerics::ModelParams& params, const numerics::Tensor& inputs) {
  const auto logits = numerics::forward(params, inputs).logits;
  std::vector<int> out(logits.rows());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto r = logits.row(b);
    // max_element returns the first maximum, i.e. the lowest class id.
    out[b] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

double top1_accuracy(const numerics::ModelParams& params, std::span<const scenegen::Scene> scenes) {
  if (scenes.empty()) throw Error(ErrorCode::EmptyDataset, "top-1 accuracy of an empty split");
  const auto predicted = predict(params, scenegen::flatten(scenes));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) correct += predicted[i] == scenes[i].label;
  return static_cast<double>(correct) / static_cast<double>(scenes.size());
}

ProbeResult background_probe(const numerics::ModelParams& params, std::span<const scenegen::Scene> scenes) {
  if (scenes.empty()) throw Error(ErrorCode::EmptyDataset, "background probe needs scenes");
  numerics::Tensor inputs = scenegen::flatten(scenes);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& mask = scenes[i].mask;
    if (mask.size() != inputs.cols()) throw Error(ErrorCode::ShapeMismatch, "probe scene has no mask");
    auto row = inputs.row(i);
    for (std::size_t p = 0; p < row.size(); ++p) {
      if (mask[p] != 0.0) row[p] = 0.0;
    }
  }
  const auto probs = numerics::softmax(numerics::forward(params, inputs).logits);
  const std::size_t classes = probs.cols();
  const double uniform = 1.0 / static_cast<double>(classes);

  ProbeResult result;
  std::map<int, FamilyProbe> families;
  double total = 0.0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    auto p = probs.row(i);
    const auto top = std::max_element(p.begin(), p.end());
    total += *top - uniform;
    auto& fam = families[scenes[i].bg_family];
    if (fam.mean_probs.empty()) {
      fam.family = scenes[i].bg_family;
      fam.mean_probs.assign(classes, 0.0);
      fam.argmax_counts.assign(classes, 0);
    }
    ++fam.count;
    for (std::size_t c = 0; c < classes; ++c) fam.mean_probs[c] += p[c];
    ++fam.argmax_counts[static_cast<std::size_t>(top - p.begin())];
  }
  result.assoc_score = total / static_cast<double>(scenes.size());
  for (auto& [id, fam] : families) {
    for (double& v : fam.mean_probs) v /= static_cast<double>(fam.count);
    result.families.push_back(std::move(fam));
  }
  return result;
}

}  // namespace fedddl::harness

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "config.hpp"
#include "evaluation.hpp"
#include "federation.hpp"
#include "scenegen.hpp"

namespace fedddl::harness {

struct RoundMetrics {
  std::size_t round = 0;
  double global_top1 = 0.0;
  std::vector<double> local_top1;  // one entry per client holding a local model
  double local_mean = 0.0;
  double local_std = 0.0;          // population standard deviation
  double loss_j = 0.0;
  double loss_cr = 0.0;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "round,global_top1,local_top1_mean,local_top1_std,local_top1_list,loss_j,loss_cr,wall_ms";

std::string format_metrics_row(const RoundMetrics& m);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(const std::vector<double>& values);

struct TrainOutcome {
  std::vector<RoundMetrics> rounds;
  federation::ExperimentResult result;
  double global_top1 = 0.0;
  std::vector<double> local_top1;
  MeanStd local;
  ProbeResult probe;
};

// Runs the experiment. When out_dir is nonempty, writes metrics.csv,
// summary.json, global.bin and client_<k>.bin there.
TrainOutcome train(const RunConfig& cfg, const scenegen::FederatedDataset& dataset, const std::string& out_dir);

// A scene together with where it came from; client is -1 for the test split.
struct SplitEntry {
  int client = -1;
  std::size_t index = 0;
  const scenegen::Scene* scene = nullptr;
};

// split is "test", "train" (every client) or "client<k>".
std::vector<SplitEntry> select_split(const scenegen::FederatedDataset& dataset, const std::string& split);
std::vector<scenegen::Scene> split_scenes(const scenegen::FederatedDataset& dataset, const std::string& split);

std::string format_accuracy_line(double top1);

nlohmann::ordered_json probe_to_json(const ProbeResult& probe);

// CSV rows: client,sample,label,f0..f{d-1}.
void export_features(const numerics::ModelParams& params, const scenegen::FederatedDataset& dataset,
                     const std::string& split, const std::string& path);

}  // namespace fedddl::harness

#include "runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "error.hpp"
#include "io.hpp"

namespace fedddl::harness {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(sq / static_cast<double>(values.size()));
  return out;
}

std::string format_metrics_row(const RoundMetrics& m) {
  std::string list;
  for (std::size_t i = 0; i < m.local_top1.size(); ++i) {
    if (i) list += ';';
    list += fixed(m.local_top1[i], 6);
  }
  return std::to_string(m.round) + "," + fixed(m.global_top1, 6) + "," + fixed(m.local_mean, 6) + "," +
         fixed(m.local_std, 6) + "," + list + "," + fixed(m.loss_j, 6) + "," + fixed(m.loss_cr, 6) + "," +
         fixed(m.wall_ms, 3);
}

std::string format_accuracy_line(double top1) { return "top1=" + fixed(top1, 6); }

nlohmann::ordered_json probe_to_json(const ProbeResult& probe) {
  Json families = Json::array();
  for (const auto& f : probe.families) {
    families.push_back({{"family", f.family},
                        {"count", f.count},
                        {"mean_probs", f.mean_probs},
                        {"argmax_counts", f.argmax_counts}});
  }
  return {{"assoc_score", probe.assoc_score}, {"families", families}};
}

TrainOutcome train(const RunConfig& cfg, const scenegen::FederatedDataset& dataset, const std::string& out_dir) {
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + out_dir + ": " + ec.message());
  }
  TrainOutcome outcome;
  using Clock = std::chrono::steady_clock;
  auto started = Clock::now();
  auto on_round = [&](const federation::RoundResult& round, std::span<const federation::ClientState> clients) {
    RoundMetrics m;
    m.round = round.round;
    m.global_top1 = top1_accuracy(round.params, dataset.test);
    for (const auto& c : clients) {
      if (c.params) m.local_top1.push_back(top1_accuracy(*c.params, dataset.test));
    }
    const auto ms = mean_std(m.local_top1);
    m.local_mean = ms.mean;
    m.local_std = ms.std;
    for (const auto& s : round.stats) {
      m.loss_j += s.loss_j;
      m.loss_cr += s.loss_cr;
    }
    if (!round.stats.empty()) {
      m.loss_j /= static_cast<double>(round.stats.size());
      m.loss_cr /= static_cast<double>(round.stats.size());
    }
    if (cfg.record_wall_time) {
      const auto now = Clock::now();
      m.wall_ms = std::chrono::duration<double, std::milli>(now - started).count();
      started = now;
    }
    outcome.rounds.push_back(std::move(m));
  };
  outcome.result = federation::run_experiment(dataset, cfg.experiment, on_round);
  outcome.global_top1 = top1_accuracy(outcome.result.global, dataset.test);
  for (const auto& local : outcome.result.local) {
    if (local) outcome.local_top1.push_back(top1_accuracy(*local, dataset.test));
  }
  outcome.local = mean_std(outcome.local_top1);
  outcome.probe = background_probe(outcome.result.global, dataset.test);

  if (out_dir.empty()) return outcome;

  std::string csv = std::string(kMetricsHeader) + "\n";
  for (const auto& m : outcome.rounds) csv += format_metrics_row(m) + "\n";
  write_text(out_dir + "/metrics.csv", csv);

  write_model(out_dir + "/global.bin", outcome.result.global);
  Json locals = Json::array();
  for (std::size_t k = 0; k < outcome.result.local.size(); ++k) {
    if (!outcome.result.local[k]) continue;
    const std::string name = "client_" + std::to_string(k) + ".bin";
    write_model(out_dir + "/" + name, *outcome.result.local[k]);
    locals.push_back(name);
  }

  Json summary;
  summary["seed"] = cfg.seed;
  summary["method"] = method_name(cfg.experiment.training.method);
  summary["rounds"] = cfg.experiment.rounds;
  summary["global_top1"] = outcome.global_top1;
  summary["local_top1"] = outcome.local_top1;
  summary["local_top1_mean"] = outcome.local.mean;
  summary["local_top1_std"] = outcome.local.std;
  summary["probe"] = probe_to_json(outcome.probe);
  summary["models"] = {{"global", "global.bin"}, {"local", locals}};
  summary["warnings"] = cfg.warnings;
  summary["config"] = to_json(cfg);
  write_text(out_dir + "/summary.json", summary.dump(2) + "\n");
  return outcome;
}

std::vector<SplitEntry> select_split(const scenegen::FederatedDataset& dataset, const std::string& split) {
  std::vector<SplitEntry> out;
  if (split == "test") {
    for (std::size_t j = 0; j < dataset.test.size(); ++j) out.push_back({-1, j, &dataset.test[j]});
    return out;
  }
  auto add_client = [&](std::size_t k) {
    for (std::size_t j = 0; j < dataset.clients[k].size(); ++j) {
      out.push_back({static_cast<int>(k), j, &dataset.clients[k][j]});
    }
  };
  if (split == "train") {
    for (std::size_t k = 0; k < dataset.clients.size(); ++k) add_client(k);
    return out;
  }
  if (split.rfind("client", 0) == 0 && split.size() > 6) {
    const std::string digits = split.substr(6);
    if (digits.find_first_not_of("0123456789") == std::string::npos && digits.size() < 9) {
      const std::size_t k = std::stoul(digits);
      if (k < dataset.clients.size()) {
        add_client(k);
        return out;
      }
    }
  }
  throw Error(ErrorCode::InvalidConfig, "split: expected test, train or client<k>, got \"" + split + "\"");
}

std::vector<scenegen::Scene> split_scenes(const scenegen::FederatedDataset& dataset, const std::string& split) {
  std::vector<scenegen::Scene> out;
  for (const auto& e : select_split(dataset, split)) out.push_back(*e.scene);
  return out;
}

void export_features(const numerics::ModelParams& params, const scenegen::FederatedDataset& dataset,
                     const std::string& split, const std::string& path) {
  const auto entries = select_split(dataset, split);
  if (entries.empty()) throw Error(ErrorCode::EmptyDataset, "split " + split + " has no scenes");
  std::string csv = "client,sample,label";
  for (std::size_t d = 0; d < params.feature_dim(); ++d) csv += ",f" + std::to_string(d);
  csv += "\n";
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < entries.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, entries.size() - start);
    std::vector<scenegen::Scene> chunk;
    chunk.reserve(n);
    for (std::size_t i = 0; i < n; ++i) chunk.push_back(*entries[start + i].scene);
    const auto out = numerics::forward(params, scenegen::flatten(chunk));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& e = entries[start + i];
      csv += std::to_string(e.client) + "," + std::to_string(e.index) + "," + std::to_string(e.scene->label);
      for (double v : out.features.row(i)) csv += "," + real(v);
      csv += "\n";
    }
  }
  write_text(path, csv);
}

}  // namespace fedddl::harness

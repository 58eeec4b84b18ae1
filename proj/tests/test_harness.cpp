#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "io.hpp"
#include "runner.hpp"

using namespace fedddl;
using namespace fedddl::harness;
using numerics::ModelParams;
using numerics::Tensor;

namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("fedddl_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

scenegen::Scene two_pixel(double object, double background, int label, int family) {
  scenegen::Scene s;
  s.pixels = Tensor({1, 2}, {object, background});
  s.mask = Tensor({1, 2}, {1, 0});
  s.label = label;
  s.bg_family = family;
  return s;
}

// Identity extractor on 2 inputs followed by the given head.
ModelParams head_net(std::vector<double> head, std::size_t classes) {
  ModelParams p;
  p.layers.push_back({Tensor({2, 2}, {1, 0, 0, 1}), Tensor::vector(2)});
  p.layers.push_back({Tensor({classes, 2}, std::move(head)), Tensor::vector(classes)});
  return p;
}

RunConfig tiny_run() {
  Json doc = Json::object();
  apply_override(doc, "dataset.clients=2");
  apply_override(doc, "dataset.classes=3");
  apply_override(doc, "dataset.per_client=40");
  apply_override(doc, "dataset.test=30");
  apply_override(doc, "model.hidden=[8]");
  apply_override(doc, "model.feature_dim=4");
  apply_override(doc, "training.rounds=3");
  apply_override(doc, "training.epochs=1");
  apply_override(doc, "training.batch_size=16");
  return parse_config(doc);
}

}  // namespace

TEST_CASE("top1: all correct, half correct and ties") {
  const auto p = head_net({1, 0, 0, 1}, 2);
  std::vector<scenegen::Scene> scenes{two_pixel(0.9, 0.1, 0, 0), two_pixel(0.1, 0.9, 1, 0)};
  CHECK(top1_accuracy(p, scenes) == 1.0);
  scenes[1].label = 0;
  CHECK(top1_accuracy(p, scenes) == 0.5);

  // Zero head: every prediction ties and goes to class 0; balanced labels give 1/N.
  const auto zero = head_net({0, 0, 0, 0, 0, 0}, 3);
  std::vector<scenegen::Scene> balanced;
  for (int i = 0; i < 9; ++i) balanced.push_back(two_pixel(0.7, 0.2, i % 3, 0));
  CHECK(top1_accuracy(zero, balanced) == doctest::Approx(1.0 / 3.0));
  CHECK(predict(zero, Tensor({1, 2}, {0.5, 0.5}))[0] == 0);
  CHECK_THROWS_AS(top1_accuracy(p, std::vector<scenegen::Scene>{}), Error);
}

TEST_CASE("probe: uniform and one-hot models bound the score") {
  std::vector<scenegen::Scene> scenes{two_pixel(0.9, 0.2, 0, 4), two_pixel(0.8, 0.3, 1, 5)};
  CHECK(background_probe(head_net({0, 0, 0, 0}, 2), scenes).assoc_score == 0.0);
  // A huge bias on class 1 makes the output one-hot regardless of input.
  auto onehot = head_net({0, 0, 0, 0, 0, 0, 0, 0}, 4);
  onehot.layers[1].bias[1] = 1000.0;
  const auto r = background_probe(onehot, scenes);
  CHECK(r.assoc_score == doctest::Approx(0.75).epsilon(1e-12));
  REQUIRE(r.families.size() == 2);
  CHECK(r.families[0].family == 4);
  CHECK(r.families[0].argmax_counts[1] == 1);
  CHECK_THROWS_AS(background_probe(onehot, std::vector<scenegen::Scene>{}), Error);
}

TEST_CASE("probe: two-pixel model keyed to the background matches a direct softmax") {
  // Head reads only the background pixel. The object pixel is zeroed by the
  // probe, so the object value must not matter.
  const auto p = head_net({0, 5, 0, -5}, 2);
  std::vector<scenegen::Scene> scenes{two_pixel(0.9, 0.3, 0, 0), two_pixel(0.6, 0.1, 1, 1)};
  const auto r = background_probe(p, scenes);
  auto score = [](double b) {
    const double z0 = 5 * b, z1 = -5 * b;
    const double p0 = std::exp(z0) / (std::exp(z0) + std::exp(z1));
    return std::max(p0, 1 - p0) - 0.5;
  };
  CHECK(r.assoc_score == doctest::Approx((score(0.3) + score(0.1)) / 2).epsilon(1e-12));
  CHECK(r.families[0].mean_probs[0] == doctest::Approx(0.5 + score(0.3)).epsilon(1e-12));
}

TEST_CASE("config: defaults follow the reference settings") {
  const auto cfg = parse_config(Json::object());
  CHECK(cfg.dataset.clients == 7);
  CHECK(cfg.experiment.rounds == 50);
  CHECK(cfg.experiment.training.epochs == 10);
  CHECK(cfg.experiment.training.batch_size == 64);
  CHECK(cfg.experiment.training.lr == 0.01);
  CHECK(cfg.experiment.training.weight_decay == 0.01);
  CHECK(cfg.experiment.training.lambda == 1.0);
  CHECK(cfg.experiment.training.tau == 0.07);
  CHECK(cfg.experiment.training.counterfactual.eta == 3);
  CHECK(cfg.experiment.training.method == federation::Method::FedDDL);
  CHECK(cfg.warnings.empty());
}

TEST_CASE("config: overrides parse JSON values and create sections") {
  Json doc = Json::object();
  apply_override(doc, "training.lr=0.05");
  apply_override(doc, "method=fedavg");
  apply_override(doc, "model.hidden=[32,16]");
  apply_override(doc, "seed=42");
  const auto cfg = parse_config(doc);
  CHECK(cfg.experiment.training.lr == 0.05);
  CHECK(cfg.experiment.training.method == federation::Method::FedAvg);
  CHECK(cfg.experiment.hidden == std::vector<std::size_t>{32, 16});
  CHECK(cfg.seed == 42);
  CHECK(cfg.dataset.seed == 42);
  CHECK(cfg.experiment.seed == 42);
  CHECK_THROWS_AS(apply_override(doc, "novalue"), Error);
  CHECK_THROWS_AS(apply_override(doc, "training..lr=1"), Error);
}

TEST_CASE("config: invalid values name the field") {
  auto rejects = [](const std::string& assignment, const std::string& field) {
    Json doc = Json::object();
    apply_override(doc, assignment);
    try {
      parse_config(doc);
      FAIL("accepted " << assignment);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidConfig);
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  rejects("fedddl.lambda=-1", "fedddl.lambda");
  rejects("fedddl.tau=0", "fedddl.tau");
  rejects("fedddl.eta=0", "fedddl.eta");
  rejects("training.rounds=0", "training.rounds");
  rejects("training.epochs=0", "training.epochs");
  rejects("training.sample_fraction=1.5", "training.sample_fraction");
  rejects("training.lr=\"fast\"", "training.lr");
  rejects("training.momentum=0.9", "training.momentum");
  rejects("method=sgd", "method");
  rejects("dataset.height=8", "height");
  rejects("fedddl.transforms=[\"shear\"]", "fedddl.transforms");
  rejects("training.aggregation=median", "training.aggregation");
}

TEST_CASE("config: fedddl settings under fedavg produce a warning") {
  Json doc = Json::object();
  apply_override(doc, "method=fedavg");
  apply_override(doc, "fedddl.lambda=2");
  const auto cfg = parse_config(doc);
  REQUIRE(cfg.warnings.size() == 1);
  CHECK(cfg.warnings[0].find("fedddl") != std::string::npos);
}

TEST_CASE("config: echo parses back to the same settings") {
  auto cfg = tiny_run();
  const auto again = parse_config(to_json(cfg));
  CHECK(to_json(again) == to_json(cfg));
}

TEST_CASE("config: missing file is a config error") {
  try {
    load_config("/nonexistent/c.json", {});
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
  }
}

TEST_CASE("io: split files round trip exactly") {
  const auto dir = scratch("split");
  scenegen::DatasetSpec spec;
  spec.clients = 2;
  spec.per_client_count = 25;
  spec.test_count = 13;
  const auto ds = scenegen::generate(spec);
  write_dataset(dir.string(), ds);
  const auto back = read_dataset(dir.string());
  REQUIRE(back.clients.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    REQUIRE(back.clients[k].size() == 25);
    for (std::size_t j = 0; j < 25; ++j) {
      CHECK(back.clients[k][j].pixels == ds.clients[k][j].pixels);
      CHECK(back.clients[k][j].mask == ds.clients[k][j].mask);
      CHECK(back.clients[k][j].label == ds.clients[k][j].label);
      CHECK(back.clients[k][j].bg_family == ds.clients[k][j].bg_family);
    }
  }
  CHECK(back.test.size() == 13);
  CHECK(back.assignment == ds.assignment);
  CHECK(back.test_families == ds.test_families);

  // Header layout: magic, version, N, B, H, W, count.
  const auto bytes = slurp(dir / "test.bin");
  CHECK(bytes.substr(0, 4) == "FDDL");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[8]) == 5);
  CHECK(static_cast<unsigned char>(bytes[12]) == 10);
  CHECK(static_cast<unsigned char>(bytes[16]) == 16);
  CHECK(static_cast<unsigned char>(bytes[24]) == 13);
  CHECK(bytes.size() == 28 + 13 * (4 + 256 * 4 + 32));
}

TEST_CASE("io: corrupt files are reported as format errors") {
  const auto dir = scratch("corrupt");
  {
    std::ofstream(dir / "bad.bin", std::ios::binary) << "NOPE";
  }
  try {
    read_split((dir / "bad.bin").string());
    FAIL("expected failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Format);
  }
  scenegen::DatasetSpec spec;
  spec.clients = 1;
  spec.per_client_count = 3;
  spec.test_count = 2;
  const auto ds = scenegen::generate(spec);
  write_split((dir / "ok.bin").string(), {5, 10, 16, 16, 0}, ds.test);
  auto bytes = slurp(dir / "ok.bin");
  bytes.pop_back();
  {
    std::ofstream(dir / "short.bin", std::ios::binary) << bytes;
  }
  CHECK_THROWS_AS(read_split((dir / "short.bin").string()), Error);
  CHECK_THROWS_AS(read_split((dir / "missing.bin").string()), Error);
}

TEST_CASE("io: model checkpoints round trip bit-exactly") {
  const auto dir = scratch("model");
  const std::vector<std::size_t> sizes{6, 5, 3, 2};
  const auto p = numerics::init_params(77, sizes);
  write_model((dir / "m.bin").string(), p);
  CHECK(read_model((dir / "m.bin").string()) == p);
  const auto bytes = slurp(dir / "m.bin");
  CHECK(bytes.substr(0, 4) == "FDDM");
  CHECK(bytes.size() == 12 + 3 * 8 + 8 * (30 + 5 + 15 + 3 + 6 + 2));
  {
    std::ofstream(dir / "bad.bin", std::ios::binary) << bytes.substr(0, 20);
  }
  CHECK_THROWS_AS(read_model((dir / "bad.bin").string()), Error);
}

TEST_CASE("metrics rows have the fixed column layout") {
  RoundMetrics m;
  m.round = 3;
  m.global_top1 = 0.5;
  m.local_top1 = {0.25, 0.75};
  m.local_mean = 0.5;
  m.local_std = 0.25;
  m.loss_j = 1.5;
  CHECK(std::string(kMetricsHeader) ==
        "round,global_top1,local_top1_mean,local_top1_std,local_top1_list,loss_j,loss_cr,wall_ms");
  CHECK(format_metrics_row(m) == "3,0.500000,0.500000,0.250000,0.250000;0.750000,1.500000,0.000000,0.000");
  const auto ms = mean_std({0.25, 0.75});
  CHECK(ms.mean == 0.5);
  CHECK(ms.std == 0.25);
}

TEST_CASE("train writes metrics, summary and checkpoints") {
  const auto dir = scratch("train");
  const auto cfg = tiny_run();
  const auto ds = scenegen::generate(cfg.dataset);
  const auto outcome = train(cfg, ds, dir.string());
  const auto csv = slurp(dir / "metrics.csv");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == kMetricsHeader);
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    REQUIRE(cols.size() == 8);
    CHECK(std::stoul(cols[0]) == rows);
    for (int c : {1, 2}) {
      const double v = std::stod(cols[static_cast<std::size_t>(c)]);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(std::stod(cols[3]) >= 0.0);
    CHECK(std::stod(cols[7]) == 0.0);
  }
  CHECK(rows == 3);

  const auto summary = Json::parse(slurp(dir / "summary.json"));
  CHECK(summary["global_top1"].get<double>() == outcome.global_top1);
  CHECK(summary["seed"].get<std::uint64_t>() == 1);
  CHECK(summary["config"]["training"]["rounds"].get<int>() == 3);
  CHECK(summary["probe"]["assoc_score"].get<double>() == outcome.probe.assoc_score);
  CHECK(read_model((dir / "global.bin").string()) == outcome.result.global);
  CHECK(read_model((dir / "client_1.bin").string()) == *outcome.result.local[1]);
  CHECK(top1_accuracy(read_model((dir / "global.bin").string()), ds.test) == outcome.global_top1);

  const auto again = scratch("train_again");
  train(cfg, ds, again.string());
  CHECK(slurp(again / "metrics.csv") == csv);
  CHECK(slurp(again / "summary.json") == slurp(dir / "summary.json"));
}

TEST_CASE("splits and feature export") {
  const auto dir = scratch("features");
  const auto cfg = tiny_run();
  const auto ds = scenegen::generate(cfg.dataset);
  CHECK(select_split(ds, "test").size() == 30);
  CHECK(select_split(ds, "train").size() == 80);
  CHECK(select_split(ds, "client1").size() == 40);
  CHECK(select_split(ds, "client1")[0].client == 1);
  CHECK_THROWS_AS(select_split(ds, "client2"), Error);
  CHECK_THROWS_AS(select_split(ds, "validation"), Error);

  const auto p = federation::initial_params(cfg.experiment, 256, 3);
  export_features(p, ds, "train", (dir / "f.csv").string());
  std::istringstream lines(slurp(dir / "f.csv"));
  std::string line;
  std::getline(lines, line);
  CHECK(line == "client,sample,label,f0,f1,f2,f3");
  std::size_t rows = 0;
  std::string first;
  while (std::getline(lines, line)) {
    if (rows == 0) first = line;
    ++rows;
  }
  CHECK(rows == 80);
  const auto feats = numerics::forward(p, scenegen::flatten(std::span(ds.clients[0]).subspan(0, 1))).features;
  std::stringstream ss(first);
  std::string col;
  std::vector<std::string> cols;
  while (std::getline(ss, col, ',')) cols.push_back(col);
  REQUIRE(cols.size() == 7);
  CHECK(cols[0] == "0");
  CHECK(cols[1] == "0");
  CHECK(std::stoi(cols[2]) == ds.clients[0][0].label);
  for (std::size_t d = 0; d < 4; ++d) CHECK(std::stod(cols[3 + d]) == feats[d]);
}

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedddl/fedddl.h"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Failure {
  int code;
};

int exit_code(fedddl_status status) {
  switch (status) {
    case FEDDDL_ERR_CONFIG:
    case FEDDDL_ERR_ARGUMENT:
      return kExitConfig;
    default:
      return kExitRuntime;
  }
}

void check(fedddl_status status) {
  if (status == FEDDDL_OK) return;
  std::fprintf(stderr, "error: %s\n", fedddl_last_error());
  throw Failure{exit_code(status)};
}

// Owns the three handle kinds for the duration of one subcommand.
struct Session {
  fedddl_config* config = nullptr;
  fedddl_dataset* dataset = nullptr;
  fedddl_model* model = nullptr;
  ~Session() {
    fedddl_model_free(model);
    fedddl_dataset_free(dataset);
    fedddl_config_free(config);
  }
};

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.path, "JSON config file (all fields optional)");
  cmd->add_option("--set", args.overrides, "Override a config field, e.g. --set training.lr=0.05")
      ->allow_extra_args(false);
}

void load_config(Session& s, const ConfigArgs& args) {
  check(fedddl_config_load(args.path.empty() ? nullptr : args.path.c_str(), &s.config));
  for (const auto& o : args.overrides) check(fedddl_config_set(s.config, o.c_str()));
  check(fedddl_config_finalize(s.config));
  for (size_t i = 0; i < fedddl_config_warning_count(s.config); ++i) {
    std::fprintf(stderr, "warning: %s\n", fedddl_config_warning(s.config, i));
  }
}

// Dataset comes from --data when given, otherwise it is generated from the config.
void load_dataset(Session& s, const ConfigArgs& args, const std::string& data_dir) {
  if (!data_dir.empty()) {
    check(fedddl_dataset_load(data_dir.c_str(), &s.dataset));
    return;
  }
  load_config(s, args);
  check(fedddl_dataset_generate(s.config, &s.dataset));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated deconfounding and debiasing simulator"};
  app.require_subcommand(1);

  ConfigArgs cfg_args;
  std::string data_dir;
  std::string out;
  std::string model_path;
  std::string split = "test";

  auto* gen = app.add_subcommand("gen", "Generate a dataset directory");
  add_config_options(gen, cfg_args);
  gen->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Run an experiment and write metrics, summary and checkpoints");
  add_config_options(train, cfg_args);
  train->add_option("--data", data_dir, "Dataset directory written by gen (default: generate from config)");
  train->add_option("--out", out, "Output directory (default: output_dir from config)");

  auto* probe = app.add_subcommand("probe", "Background-only probe of a model on the test split");
  add_config_options(probe, cfg_args);
  probe->add_option("--model", model_path, "Model checkpoint")->required();
  probe->add_option("--data", data_dir, "Dataset directory");
  probe->add_option("--out", out, "Write per-family histograms as JSON");

  auto* features = app.add_subcommand("export-features", "Write feature vectors as CSV");
  add_config_options(features, cfg_args);
  features->add_option("--model", model_path, "Model checkpoint")->required();
  features->add_option("--data", data_dir, "Dataset directory");
  features->add_option("--split", split, "test, train or client<k>");
  features->add_option("--out", out, "CSV path")->required();

  auto* eval = app.add_subcommand("eval", "Print the Top-1 accuracy of a model");
  add_config_options(eval, cfg_args);
  eval->add_option("--model", model_path, "Model checkpoint")->required();
  eval->add_option("--data", data_dir, "Dataset directory");
  eval->add_option("--split", split, "test, train or client<k>");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    Session s;
    if (gen->parsed()) {
      load_config(s, cfg_args);
      check(fedddl_dataset_generate(s.config, &s.dataset));
      check(fedddl_dataset_save(s.dataset, out.c_str()));
      fedddl_dataset_info info{};
      check(fedddl_dataset_get_info(s.dataset, &info));
      std::printf("wrote %zu train and %zu test scenes to %s\n", info.train_count, info.test_count, out.c_str());
    } else if (train->parsed()) {
      load_config(s, cfg_args);
      if (data_dir.empty()) {
        check(fedddl_dataset_generate(s.config, &s.dataset));
      } else {
        check(fedddl_dataset_load(data_dir.c_str(), &s.dataset));
      }
      fedddl_train_summary summary{};
      const char* dir = out.empty() ? fedddl_config_output_dir(s.config) : out.c_str();
      check(fedddl_train(s.config, s.dataset, dir, &summary));
      std::printf("global_top1=%.6f local_top1=%.6f+-%.6f assoc_score=%.6f\n", summary.global_top1,
                  summary.local_top1_mean, summary.local_top1_std, summary.assoc_score);
    } else if (probe->parsed()) {
      load_dataset(s, cfg_args, data_dir);
      check(fedddl_model_load(model_path.c_str(), &s.model));
      double score = 0.0;
      check(fedddl_model_probe(s.model, s.dataset, out.empty() ? nullptr : out.c_str(), &score));
      std::printf("assoc_score=%.6f\n", score);
    } else if (features->parsed()) {
      load_dataset(s, cfg_args, data_dir);
      check(fedddl_model_load(model_path.c_str(), &s.model));
      check(fedddl_model_export_features(s.model, s.dataset, split.c_str(), out.c_str()));
    } else if (eval->parsed()) {
      load_dataset(s, cfg_args, data_dir);
      check(fedddl_model_load(model_path.c_str(), &s.model));
      double top1 = 0.0;
      check(fedddl_model_accuracy(s.model, s.dataset, split.c_str(), &top1));
      std::printf("top1=%.6f\n", top1);
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}

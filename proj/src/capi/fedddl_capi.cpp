#include "fedddl/fedddl.h"

#include <exception>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "config.hpp"
#include "error.hpp"
#include "evaluation.hpp"
#include "io.hpp"
#include "runner.hpp"

struct fedddl_config {
  fedddl::harness::Json doc = fedddl::harness::Json::object();
  fedddl::harness::RunConfig cfg;
  bool finalized = false;
  std::string json;
};

struct fedddl_dataset {
  fedddl::scenegen::FederatedDataset data;
};

struct fedddl_model {
  fedddl::numerics::ModelParams params;
};

namespace {

thread_local std::string g_last_error;

fedddl_status fail(fedddl_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

fedddl_status from_code(fedddl::ErrorCode code) {
  using fedddl::ErrorCode;
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidSpec:
    case ErrorCode::TemperatureNonPositive:
      return FEDDDL_ERR_CONFIG;
    case ErrorCode::Io: return FEDDDL_ERR_IO;
    case ErrorCode::Format: return FEDDDL_ERR_FORMAT;
    default: return FEDDDL_ERR_RUNTIME;
  }
}

template <typename F>
fedddl_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return FEDDDL_OK;
  } catch (const fedddl::Error& e) {
    return fail(from_code(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(FEDDDL_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(FEDDDL_ERR_RUNTIME, e.what());
  }
}

}  // namespace

extern "C" {

const char* fedddl_last_error(void) { return g_last_error.c_str(); }

const char* fedddl_version(void) { return "1.0.0"; }

fedddl_status fedddl_config_load(const char* path, fedddl_config** out) {
  if (!out) return fail(FEDDDL_ERR_ARGUMENT, "out is null");
  *out = nullptr;
  return guarded([&] {
    auto handle = std::make_unique<fedddl_config>();
    if (path) handle->doc = fedddl::harness::read_config_document(path);
    *out = handle.release();
  });
}

fedddl_status fedddl_config_set(fedddl_config* cfg, const char* assignment) {
  if (!cfg || !assignment) return fail(FEDDDL_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    fedddl::harness::apply_override(cfg->doc, assignment);
    cfg->finalized = false;
  });
}

fedddl_status fedddl_config_finalize(fedddl_config* cfg) {
  if (!cfg) return fail(FEDDDL_ERR_ARGUMENT, "config is null");
  return guarded([&] {
    cfg->cfg = fedddl::harness::parse_config(cfg->doc);
    cfg->json = fedddl::harness::to_json(cfg->cfg).dump(2);
    cfg->finalized = true;
  });
}

size_t fedddl_config_warning_count(const fedddl_config* cfg) { return cfg ? cfg->cfg.warnings.size() : 0; }

const char* fedddl_config_warning(const fedddl_config* cfg, size_t index) {
  if (!cfg || index >= cfg->cfg.warnings.size()) return nullptr;
  return cfg->cfg.warnings[index].c_str();
}

const char* fedddl_config_output_dir(const fedddl_config* cfg) { return cfg ? cfg->cfg.output_dir.c_str() : nullptr; }

const char* fedddl_config_json(const fedddl_config* cfg) {
  if (!cfg || !cfg->finalized) return nullptr;
  return cfg->json.c_str();
}

void fedddl_config_free(fedddl_config* cfg) { delete cfg; }

fedddl_status fedddl_dataset_generate(const fedddl_config* cfg, fedddl_dataset** out) {
  if (!cfg || !out) return fail(FEDDDL_ERR_ARGUMENT, "null argument");
  if (!cfg->finalized) return fail(FEDDDL_ERR_CONFIG, "config not finalized");
  *out = nullptr;
  return guarded([&] { *out = new fedddl_dataset{fedddl::scenegen::generate(cfg->cfg.dataset)}; });
}

fedddl_status fedddl_dataset_load(const char* dir, fedddl_dataset** out) {
  if (!dir || !out) return fail(FEDDDL_ERR_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new fedddl_dataset{fedddl::harness::read_dataset(dir)}; });
}

fedddl_status fedddl_dataset_save(const fedddl_dataset* ds, const char* dir) {
  if (!ds || !dir) return fail(FEDDDL_ERR_ARGUMENT, "null argument");
  return guarded([&] { fedddl::harness::write_dataset(dir, ds->data); });
}

fedddl_status fedddl_dataset_get_info(const fedddl_dataset* ds, fedddl_dataset_info* out) {
  if (!ds || !out) return fail(FEDDDL_ERR_ARGUMENT, "null argument");
  const auto& spec = ds->data.spec;
  out->clients = ds->data.clients.size();
  out->classes = spec.classes;
  out->families = spec.families;
  out->height = spec.height;
  out->width = spec.width;
  out->train_count = 0;
  for (const auto& c : ds->data.clients) out->train_count += c.size();
  out->test_count = ds->data.test.size();
  return FEDDDL_OK;
}

void fedddl_dataset_free(fedddl_dataset* ds) { delete ds; }

fedddl_status fedddl_train(const fedddl_config* cfg, const fedddl_dataset* ds, const char* out_dir,
                           fedddl_train_summary* summary) {
  if (!cfg || !ds) return fail(FEDDDL_ERR_ARGUMENT, "null argument");
  if (!cfg->finalized) return fail(FEDDDL_ERR_CONFIG, "config not finalized");
  return guarded([&] {
    const auto& spec = ds->data.spec;
    if (spec.classes == 0 || ds->data.clients.empty()) {
      throw fedddl::Error(fedddl::ErrorCode::EmptyDataset, "dataset has no clients");
    }
    const std::string dir = out_dir ? out_dir : cfg->cfg.output_dir;
    const auto outcome = fedddl::harness::train(cfg->cfg, ds->data, dir);
    if (summary) {
      summary->global_top1 = outcome.global_top1;
      summary->local_top1_mean = outcome.local.mean;
      summary->local_top1_std = outcome.local.std;
      summary->assoc_score = outcome.probe.assoc_score;
      summary->rounds = outcome.rounds.size();
    }
  });
}

fedddl_status fedddl_model_load(const char* path, fedddl_model** out) {
  if (!path || !out) return fail(FEDDDL_ERR_ARGUMENT, "null argument");
  *out = nullptr;
  return guarded([&] { *out = new fedddl_model{fedddl::harness::read_model(path)}; });
}

fedddl_status fedddl_model_save(const fedddl_model* model, const char* path) {
  if (!model || !path) return fail(FEDDDL_ERR_ARGUMENT, "null argument");
  return guarded([&] { fedddl::harness::write_model(path, model->params); });
}

size_t fedddl_model_feature_dim(const fedddl_model* model) { return model ? model->params.feature_dim() : 0; }

void fedddl_model_free(fedddl_model* model) { delete model; }

namespace {

void check_compatible(const fedddl_model* model, const fedddl_dataset* ds) {
  const auto& spec = ds->data.spec;
  if (model->params.input_dim() != spec.height * spec.width || model->params.class_count() != spec.classes) {
    throw fedddl::Error(fedddl::ErrorCode::ShapeMismatch, "model does not match the dataset's frame or class count");
  }
}

}  // namespace

fedddl_status fedddl_model_accuracy(const fedddl_model* model, const fedddl_dataset* ds, const char* split,
                                    double* top1) {
  if (!model || !ds || !split || !top1) return fail(FEDDDL_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    check_compatible(model, ds);
    const auto scenes = fedddl::harness::split_scenes(ds->data, split);
    *top1 = fedddl::harness::top1_accuracy(model->params, scenes);
  });
}

fedddl_status fedddl_model_probe(const fedddl_model* model, const fedddl_dataset* ds, const char* json_path,
                                 double* assoc_score) {
  if (!model || !ds || !assoc_score) return fail(FEDDDL_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    check_compatible(model, ds);
    const auto probe = fedddl::harness::background_probe(model->params, ds->data.test);
    *assoc_score = probe.assoc_score;
    if (json_path) fedddl::harness::write_text(json_path, fedddl::harness::probe_to_json(probe).dump(2) + "\n");
  });
}

fedddl_status fedddl_model_export_features(const fedddl_model* model, const fedddl_dataset* ds, const char* split,
                                           const char* csv_path) {
  if (!model || !ds || !split || !csv_path) return fail(FEDDDL_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    check_compatible(model, ds);
    fedddl::harness::export_features(model->params, ds->data, split, csv_path);
  });
}

}  // extern "C"

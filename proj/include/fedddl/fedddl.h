#ifndef FEDDDL_FEDDDL_H
#define FEDDDL_FEDDDL_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(FEDDDL_BUILDING)
#define FEDDDL_API __declspec(dllexport)
#else
#define FEDDDL_API __declspec(dllimport)
#endif
#else
#define FEDDDL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fedddl_status {
  FEDDDL_OK = 0,
  FEDDDL_ERR_ARGUMENT = 1,  /* null handle or pointer */
  FEDDDL_ERR_CONFIG = 2,    /* invalid configuration or override */
  FEDDDL_ERR_RUNTIME = 3,   /* numeric or training failure */
  FEDDDL_ERR_IO = 4,        /* file could not be read or written */
  FEDDDL_ERR_FORMAT = 5     /* file contents malformed */
} fedddl_status;

typedef struct fedddl_config fedddl_config;
typedef struct fedddl_dataset fedddl_dataset;
typedef struct fedddl_model fedddl_model;

typedef struct fedddl_train_summary {
  double global_top1;
  double local_top1_mean;
  double local_top1_std;
  double assoc_score;
  size_t rounds;
} fedddl_train_summary;

typedef struct fedddl_dataset_info {
  size_t clients;
  size_t classes;
  size_t families;
  size_t height;
  size_t width;
  size_t train_count; /* scenes over all clients */
  size_t test_count;
} fedddl_dataset_info;

/* Message for the most recent failure on the calling thread. */
FEDDDL_API const char* fedddl_last_error(void);
FEDDDL_API const char* fedddl_version(void);

/* path may be NULL for the built-in defaults. Overrides are staged until
   fedddl_config_finalize, which validates everything. */
FEDDDL_API fedddl_status fedddl_config_load(const char* path, fedddl_config** out);
FEDDDL_API fedddl_status fedddl_config_set(fedddl_config* cfg, const char* assignment);
FEDDDL_API fedddl_status fedddl_config_finalize(fedddl_config* cfg);
FEDDDL_API size_t fedddl_config_warning_count(const fedddl_config* cfg);
FEDDDL_API const char* fedddl_config_warning(const fedddl_config* cfg, size_t index);
FEDDDL_API const char* fedddl_config_output_dir(const fedddl_config* cfg);
/* Finalized config as JSON; the string lives as long as the handle. */
FEDDDL_API const char* fedddl_config_json(const fedddl_config* cfg);
FEDDDL_API void fedddl_config_free(fedddl_config* cfg);

FEDDDL_API fedddl_status fedddl_dataset_generate(const fedddl_config* cfg, fedddl_dataset** out);
FEDDDL_API fedddl_status fedddl_dataset_load(const char* dir, fedddl_dataset** out);
FEDDDL_API fedddl_status fedddl_dataset_save(const fedddl_dataset* ds, const char* dir);
FEDDDL_API fedddl_status fedddl_dataset_get_info(const fedddl_dataset* ds, fedddl_dataset_info* out);
FEDDDL_API void fedddl_dataset_free(fedddl_dataset* ds);

/* Trains on ds and writes metrics.csv, summary.json and checkpoints to out_dir
   (the config's output_dir when NULL). summary may be NULL. */
FEDDDL_API fedddl_status fedddl_train(const fedddl_config* cfg, const fedddl_dataset* ds, const char* out_dir,
                                      fedddl_train_summary* summary);

FEDDDL_API fedddl_status fedddl_model_load(const char* path, fedddl_model** out);
FEDDDL_API fedddl_status fedddl_model_save(const fedddl_model* model, const char* path);
FEDDDL_API size_t fedddl_model_feature_dim(const fedddl_model* model);
FEDDDL_API void fedddl_model_free(fedddl_model* model);

/* split: "test", "train" or "client<k>". */
FEDDDL_API fedddl_status fedddl_model_accuracy(const fedddl_model* model, const fedddl_dataset* ds,
                                               const char* split, double* top1);
/* Background probe on the test split; json_path may be NULL. */
FEDDDL_API fedddl_status fedddl_model_probe(const fedddl_model* model, const fedddl_dataset* ds,
                                            const char* json_path, double* assoc_score);
FEDDDL_API fedddl_status fedddl_model_export_features(const fedddl_model* model, const fedddl_dataset* ds,
                                                      const char* split, const char* csv_path);

#ifdef __cplusplus
}
#endif

#endif

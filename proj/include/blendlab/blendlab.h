#ifndef BLENDLAB_H
#define BLENDLAB_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define BL_API __declspec(dllexport)
#elif defined(__GNUC__)
#define BL_API __attribute__((visibility("default")))
#else
#define BL_API
#endif

/* Return codes; nonzero values are also the CLI exit statuses. */
typedef enum bl_status {
  BL_OK = 0,
  BL_ERR_INTERNAL = 1,
  BL_ERR_CONFIG = 2,
  BL_ERR_MISSING_INPUT = 3,
  BL_ERR_INVARIANT = 4
} bl_status;

typedef struct bl_dataset bl_dataset;
typedef struct bl_model bl_model;

/* Receives one JSON object per progress event (stage changes, finished epochs). */
typedef void (*bl_progress_fn)(const char* event_json, void* user);

BL_API const char* bl_version(void);

/* Message of the last failure on the calling thread; empty when none. */
BL_API const char* bl_last_error(void);

/* 0 selects all hardware threads. Results never depend on this value. */
BL_API void bl_set_threads(int threads);

/* Strings returned through char** outputs are owned by the caller. */
BL_API void bl_string_free(char* s);

/* Validates a (possibly partial) run configuration and returns it with every default filled in. */
BL_API bl_status bl_config_resolve(const char* config_json, char** resolved_json);

BL_API bl_status bl_dataset_generate(const char* config_json, bl_dataset** out);
BL_API bl_status bl_dataset_load(const char* dir, bl_dataset** out);
BL_API bl_status bl_dataset_save(const bl_dataset* ds, const char* dir);
BL_API bl_status bl_dataset_info(const bl_dataset* ds, char** info_json);
BL_API void bl_dataset_free(bl_dataset* ds);

BL_API bl_status bl_model_pretrain(const bl_dataset* ds, const char* config_json, bl_progress_fn progress, void* user,
                                   bl_model** out);
BL_API bl_status bl_model_load(const char* dir, bl_model** out);
BL_API bl_status bl_model_save(const bl_model* model, const char* dir);
BL_API bl_status bl_model_info(const bl_model* model, char** info_json);
BL_API void bl_model_free(bl_model* model);

/* Analyses write artifacts under out_dir and return a JSON summary in *report_json. */
BL_API bl_status bl_analyze(const bl_model* model, const bl_dataset* ds, const char* config_json, const char* out_dir,
                            char** report_json);
BL_API bl_status bl_sweep(const bl_dataset* ds, const char* config_json, const char* out_dir, bl_progress_fn progress,
                          void* user, char** report_json);
BL_API bl_status bl_mask_ablation(const bl_dataset* ds, const char* config_json, const char* out_dir,
                                  bl_progress_fn progress, void* user, char** report_json);
BL_API bl_status bl_verify(const bl_model* const* models, const char* const* names, int count,
                           const bl_dataset* heldout, const char* config_json, const char* out_dir, char** report_json);
BL_API bl_status bl_eval(const bl_model* const* models, const char* const* names, int count, const bl_dataset* ds,
                         const char* config_json, const char* out_dir, char** report_json);
BL_API bl_status bl_losses(const bl_model* model, const bl_dataset* ds, const char* config_json, const char* out_dir,
                           char** report_json);
BL_API bl_status bl_saliency(const bl_model* model, const bl_dataset* ds, const char* config_json, const char* out_dir,
                             char** report_json);
BL_API bl_status bl_blend_preview(const bl_dataset* ds, const char* config_json, const char* out_dir,
                                  char** report_json);
BL_API bl_status bl_gradient_checks(const char* config_json, const char* out_dir, char** report_json);
BL_API bl_status bl_repro(const char* config_json, const char* out_dir, int gradient_checks, bl_progress_fn progress,
                          void* user, char** report_json);

/* Writes out_dir/manifest.json: tool version, command, seed, config echo and SHA-256 of every artifact. */
BL_API bl_status bl_write_manifest(const char* out_dir, const char* command, const char* config_json);

#ifdef __cplusplus
}
#endif

#endif

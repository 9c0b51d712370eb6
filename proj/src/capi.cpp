#include "blendlab/blendlab.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <optional>

#include "blendlab/common.hpp"
#include "blendlab/parallel.hpp"
#include "blendlab/pipeline.hpp"

using namespace blendlab;

struct bl_dataset {
  IdentityDataset ds;
};

struct bl_model {
  EncoderCheckpoint ck;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
bl_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return BL_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<bl_status>(e.code());
  } catch (const json::exception& e) {
    g_last_error = std::string("config: ") + e.what();
    return BL_ERR_CONFIG;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return BL_ERR_MISSING_INPUT;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return BL_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return BL_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) fail(ErrorCode::kConfig, std::string(what) + " must not be null");
}

RunConfig parse_config(const char* text) {
  if (text == nullptr || *text == '\0') return run_config_from_json(json::object());
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(char** out, const json& j) {
  if (out != nullptr) *out = dup_string(j.dump());
}

ProgressFn progress_adapter(bl_progress_fn fn, void* user) {
  if (fn == nullptr) return {};
  return [fn, user](const json& event) { fn(event.dump().c_str(), user); };
}

std::vector<NamedCheckpoint> named(const bl_model* const* models, const char* const* names, int count) {
  need(models, "models");
  need(names, "names");
  if (count < 1) fail(ErrorCode::kConfig, "at least one model is required");
  std::vector<NamedCheckpoint> out;
  for (int i = 0; i < count; ++i) {
    need(models[i], "model");
    need(names[i], "model name");
    out.push_back({names[i], &models[i]->ck});
  }
  return out;
}

}  // namespace

extern "C" {

const char* bl_version(void) { return kToolVersion; }

const char* bl_last_error(void) { return g_last_error.c_str(); }

void bl_set_threads(int threads) { set_thread_count(threads < 0 ? 0 : threads); }

void bl_string_free(char* s) { std::free(s); }

bl_status bl_config_resolve(const char* config_json, char** resolved_json) {
  return guarded([&] { emit(resolved_json, to_json(parse_config(config_json))); });
}

bl_status bl_dataset_generate(const char* config_json, bl_dataset** out) {
  return guarded([&] {
    need(out, "out");
    *out = new bl_dataset{gen_dataset(parse_config(config_json).data)};
  });
}

bl_status bl_dataset_load(const char* dir, bl_dataset** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    *out = new bl_dataset{load_dataset(dir)};
  });
}

bl_status bl_dataset_save(const bl_dataset* ds, const char* dir) {
  return guarded([&] {
    need(ds, "dataset");
    need(dir, "dir");
    save_dataset(ds->ds, dir);
  });
}

bl_status bl_dataset_info(const bl_dataset* ds, char** info_json) {
  return guarded([&] {
    need(ds, "dataset");
    emit(info_json, {{"images", ds->ds.samples.size()},
                     {"identities", ds->ds.num_identities()},
                     {"config", to_json(ds->ds.config)}});
  });
}

void bl_dataset_free(bl_dataset* ds) { delete ds; }

bl_status bl_model_pretrain(const bl_dataset* ds, const char* config_json, bl_progress_fn progress, void* user,
                            bl_model** out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    const RunConfig cfg = parse_config(config_json);
    const ProgressFn p = progress_adapter(progress, user);
    *out = new bl_model{pretrain(ds->ds, cfg.pretrain, cfg.margin, [&](const EpochLog& l) {
      if (p) p({{"stage", "pretrain"}, {"epoch", l.epoch}, {"loss", l.loss}, {"accuracy", l.accuracy}});
    })};
  });
}

bl_status bl_model_load(const char* dir, bl_model** out) {
  return guarded([&] {
    need(dir, "dir");
    need(out, "out");
    *out = new bl_model{load_checkpoint(dir)};
  });
}

bl_status bl_model_save(const bl_model* model, const char* dir) {
  return guarded([&] {
    need(model, "model");
    need(dir, "dir");
    save_checkpoint(model->ck, dir);
  });
}

bl_status bl_model_info(const bl_model* model, char** info_json) {
  return guarded([&] {
    need(model, "model");
    const EncoderCheckpoint& ck = model->ck;
    json pretrain = to_json(ck.pretrain_cfg);
    emit(info_json, {{"pretrain", pretrain},
                     {"margin", to_json(ck.margin_cfg)},
                     {"data", to_json(ck.data_cfg)},
                     {"clean_train_accuracy", ck.clean_train_accuracy},
                     {"epochs_logged", ck.training_log.size()}});
  });
}

void bl_model_free(bl_model* model) { delete model; }

bl_status bl_analyze(const bl_model* model, const bl_dataset* ds, const char* config_json, const char* out_dir,
                     char** report_json) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(out_dir, "out_dir");
    emit(report_json, run_analyze(model->ck, ds->ds, parse_config(config_json), out_dir));
  });
}

bl_status bl_sweep(const bl_dataset* ds, const char* config_json, const char* out_dir, bl_progress_fn progress,
                   void* user, char** report_json) {
  return guarded([&] {
    need(ds, "dataset");
    need(out_dir, "out_dir");
    emit(report_json, run_sweep(ds->ds, parse_config(config_json), out_dir, progress_adapter(progress, user)));
  });
}

bl_status bl_mask_ablation(const bl_dataset* ds, const char* config_json, const char* out_dir,
                           bl_progress_fn progress, void* user, char** report_json) {
  return guarded([&] {
    need(ds, "dataset");
    need(out_dir, "out_dir");
    emit(report_json, run_mask_ablation(ds->ds, parse_config(config_json), out_dir, progress_adapter(progress, user)));
  });
}

bl_status bl_verify(const bl_model* const* models, const char* const* names, int count, const bl_dataset* heldout,
                    const char* config_json, const char* out_dir, char** report_json) {
  return guarded([&] {
    need(heldout, "heldout dataset");
    need(out_dir, "out_dir");
    const auto m = named(models, names, count);
    emit(report_json, run_verify(m, heldout->ds, parse_config(config_json), out_dir));
  });
}

bl_status bl_eval(const bl_model* const* models, const char* const* names, int count, const bl_dataset* ds,
                  const char* config_json, const char* out_dir, char** report_json) {
  return guarded([&] {
    need(ds, "dataset");
    need(out_dir, "out_dir");
    const auto m = named(models, names, count);
    emit(report_json, run_eval(m, ds->ds, parse_config(config_json), out_dir));
  });
}

bl_status bl_losses(const bl_model* model, const bl_dataset* ds, const char* config_json, const char* out_dir,
                    char** report_json) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(out_dir, "out_dir");
    emit(report_json, run_losses(model->ck, ds->ds, parse_config(config_json), out_dir));
  });
}

bl_status bl_saliency(const bl_model* model, const bl_dataset* ds, const char* config_json, const char* out_dir,
                      char** report_json) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(out_dir, "out_dir");
    emit(report_json, run_saliency(model->ck, ds->ds, parse_config(config_json), out_dir));
  });
}

bl_status bl_blend_preview(const bl_dataset* ds, const char* config_json, const char* out_dir, char** report_json) {
  return guarded([&] {
    need(ds, "dataset");
    need(out_dir, "out_dir");
    emit(report_json, run_blend_preview(ds->ds, parse_config(config_json), out_dir));
  });
}

bl_status bl_gradient_checks(const char* config_json, const char* out_dir, char** report_json) {
  return guarded([&] {
    need(out_dir, "out_dir");
    emit(report_json, run_gradient_checks(parse_config(config_json), out_dir));
  });
}

bl_status bl_repro(const char* config_json, const char* out_dir, int gradient_checks, bl_progress_fn progress,
                   void* user, char** report_json) {
  return guarded([&] {
    need(out_dir, "out_dir");
    emit(report_json,
         run_repro(parse_config(config_json), out_dir, gradient_checks != 0, progress_adapter(progress, user)));
  });
}

bl_status bl_write_manifest(const char* out_dir, const char* command, const char* config_json) {
  return guarded([&] {
    need(out_dir, "out_dir");
    need(command, "command");
    const RunConfig cfg = parse_config(config_json);
    write_manifest(out_dir, command, to_json(cfg), cfg.seed);
  });
}

}  // extern "C"

#include <cstdlib>
#include <filesystem>
#include <string>

#include "blendlab/blendlab.h"
#include "doctest.h"
#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json take(char* s) {
  json j = json::parse(s);
  bl_string_free(s);
  return j;
}

const char* kTiny = R"({"data": {"num_identities": 4, "images_per_identity": 3}, "pretrain": {"epochs": 1, "p_replace": 0.0}})";

}  // namespace

TEST_CASE("config resolution") {
  char* out = nullptr;
  REQUIRE(bl_config_resolve(R"({"seed": 9})", &out) == BL_OK);
  const json j = take(out);
  CHECK(j["data"]["master_seed"] == 9);
  CHECK(j["margin"]["K"] == j["data"]["num_identities"]);
  CHECK(std::string(bl_last_error()).empty());

  CHECK(bl_config_resolve(R"({"data": {"bogus": 1}})", &out) == BL_ERR_CONFIG);
  CHECK(std::string(bl_last_error()).find("bogus") != std::string::npos);
  CHECK(bl_config_resolve("{not json", &out) == BL_ERR_CONFIG);
  CHECK(bl_config_resolve(R"({"data": {"image_size": 30}})", &out) == BL_ERR_CONFIG);
  CHECK(std::string(bl_version()).size() > 0);
}

TEST_CASE("handles and status codes") {
  bl_set_threads(2);
  bl_dataset* ds = nullptr;
  CHECK(bl_dataset_load("/nonexistent/shard", &ds) == BL_ERR_MISSING_INPUT);
  CHECK(ds == nullptr);
  CHECK(bl_dataset_generate(kTiny, nullptr) == BL_ERR_CONFIG);
  REQUIRE(bl_dataset_generate(kTiny, &ds) == BL_OK);

  char* info = nullptr;
  REQUIRE(bl_dataset_info(ds, &info) == BL_OK);
  const json i = take(info);
  CHECK(i["images"] == 12);
  CHECK(i["identities"] == 4);
  CHECK(bl_dataset_info(nullptr, &info) == BL_ERR_CONFIG);

  const fs::path dir = fs::temp_directory_path() / ("blendlab_capi_" + std::to_string(std::rand()));
  REQUIRE(bl_dataset_save(ds, (dir / "ds").c_str()) == BL_OK);
  bl_dataset* again = nullptr;
  CHECK(bl_dataset_load((dir / "ds").c_str(), &again) == BL_OK);
  bl_dataset_free(again);

  bl_model* model = nullptr;
  CHECK(bl_model_pretrain(ds, R"({"data": {"num_identities": 4, "images_per_identity": 3}, "margin": {"K": 5}})",
                          nullptr, nullptr, &model) == BL_ERR_INVARIANT);
  CHECK(model == nullptr);

  int events = 0;
  auto count = [](const char* e, void* user) {
    CHECK(json::parse(e).is_object());
    ++*static_cast<int*>(user);
  };
  REQUIRE(bl_model_pretrain(ds, kTiny, count, &events, &model) == BL_OK);
  CHECK(events >= 1);
  REQUIRE(bl_model_save(model, (dir / "model").c_str()) == BL_OK);
  REQUIRE(bl_model_info(model, &info) == BL_OK);
  CHECK(take(info)["epochs_logged"] == 1);
  bl_model* none = nullptr;
  CHECK(bl_model_load((dir / "missing").c_str(), &none) == BL_ERR_MISSING_INPUT);

  const bl_model* models[] = {model};
  const char* names[] = {"m"};
  CHECK(bl_verify(models, names, 0, ds, kTiny, (dir / "v").c_str(), &info) == BL_ERR_CONFIG);
  CHECK(bl_write_manifest((dir / "model").c_str(), "pretrain", kTiny) == BL_OK);
  CHECK(fs::exists(dir / "model" / "manifest.json"));

  bl_model_free(model);
  bl_dataset_free(ds);
  bl_dataset_free(nullptr);
  bl_model_free(nullptr);
  bl_string_free(nullptr);
  fs::remove_all(dir);
}

#include <cstdio>
#include <optional>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "blendlab/blendlab.h"
#include "json.hpp"
#include "toml_lite.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Thrown to unwind with a status; the message is already in bl_last_error() or given here.
struct Failure {
  int status;
  std::string message;
};

void check(bl_status st) {
  if (st != BL_OK) throw Failure{st, bl_last_error()};
}

struct DatasetPtr {
  bl_dataset* p = nullptr;
  ~DatasetPtr() { bl_dataset_free(p); }
};

struct ModelPtr {
  bl_model* p = nullptr;
  std::string name;
  ModelPtr() = default;
  ModelPtr(ModelPtr&& o) noexcept : p(o.p), name(std::move(o.name)) { o.p = nullptr; }
  ~ModelPtr() { bl_model_free(p); }
};

json take_json(char* s) {
  std::unique_ptr<char, decltype(&bl_string_free)> guard(s, &bl_string_free);
  return s ? json::parse(s) : json();
}

void print_progress(const char* event, void*) { std::fprintf(stderr, "%s\n", event); }

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  int threads = 0;
  bool f64_checks = false;
  std::string out;
  std::string dataset;
  std::vector<std::string> models;
  std::optional<double> p;
  std::optional<int> pairs;
  std::optional<int> index;
  std::string report;
};

std::string resolve_config(const std::string& cmd, const Options& o) {
  json cfg = json::object();
  try {
    if (!o.config_path.empty()) {
      std::ifstream in(o.config_path, std::ios::binary);
      if (!in) throw Failure{BL_ERR_MISSING_INPUT, "cannot read config file " + o.config_path};
      std::stringstream ss;
      ss << in.rdbuf();
      cfg = toml_lite::parse(ss.str());
    }
    for (const std::string& ov : o.overrides) {
      const auto eq = ov.find('=');
      if (ov.rfind("--", 0) != 0 || eq == std::string::npos)
        throw Failure{BL_ERR_CONFIG, "unrecognised argument '" + ov + "' (overrides look like --section.key=value)"};
      toml_lite::set_path(cfg, ov.substr(2, eq - 2), toml_lite::parse_value(ov.substr(eq + 1)));
    }
  } catch (const toml_lite::ParseError& e) {
    throw Failure{BL_ERR_CONFIG, std::string("config: ") + e.what()};
  }
  if (o.seed) cfg["seed"] = *o.seed;
  if (o.p) cfg["pretrain"]["p_replace"] = *o.p;
  if (o.pairs) cfg["analysis"][cmd == "losses" ? "loss_pairs" : cmd == "eval" ? "eval_pairs" : "verify_pairs"] = *o.pairs;
  if (o.index) cfg["analysis"]["preview_index"] = *o.index;
  char* resolved = nullptr;
  check(bl_config_resolve(cfg.dump().c_str(), &resolved));
  return take_json(resolved).dump();
}

void require_flag(const std::string& value, const char* flag) {
  if (value.empty()) throw Failure{BL_ERR_CONFIG, std::string("missing required option ") + flag};
}

DatasetPtr load_dataset(const std::string& dir) {
  require_flag(dir, "--dataset");
  DatasetPtr ds;
  check(bl_dataset_load(dir.c_str(), &ds.p));
  return ds;
}

std::vector<ModelPtr> load_models(const std::vector<std::string>& specs, std::size_t min_count) {
  if (specs.size() < min_count) throw Failure{BL_ERR_CONFIG, "missing required option --model"};
  std::vector<ModelPtr> out;
  for (const std::string& spec : specs) {
    ModelPtr m;
    const auto eq = spec.find('=');
    const std::string dir = eq == std::string::npos ? spec : spec.substr(eq + 1);
    m.name = eq == std::string::npos ? fs::path(dir).lexically_normal().filename().string() : spec.substr(0, eq);
    if (m.name.empty()) m.name = "model" + std::to_string(out.size());
    check(bl_model_load(dir.c_str(), &m.p));
    out.push_back(std::move(m));
  }
  return out;
}

json run_command(const std::string& cmd, const Options& o, const std::string& config) {
  const char* cfg = config.c_str();
  char* report = nullptr;
  const std::string out = o.out;

  if (cmd == "gen-dataset") {
    DatasetPtr ds;
    check(bl_dataset_generate(cfg, &ds.p));
    check(bl_dataset_save(ds.p, out.c_str()));
    check(bl_dataset_info(ds.p, &report));
  } else if (cmd == "pretrain") {
    DatasetPtr ds = load_dataset(o.dataset);
    ModelPtr m;
    check(bl_model_pretrain(ds.p, cfg, print_progress, nullptr, &m.p));
    check(bl_model_save(m.p, out.c_str()));
    check(bl_model_info(m.p, &report));
  } else if (cmd == "analyze") {
    DatasetPtr ds = load_dataset(o.dataset);
    auto models = load_models(o.models, 1);
    if (models.size() == 1) {
      check(bl_analyze(models[0].p, ds.p, cfg, out.c_str(), &report));
    } else {
      json all = json::object();
      for (const ModelPtr& m : models) {
        check(bl_analyze(m.p, ds.p, cfg, (fs::path(out) / m.name).string().c_str(), &report));
        all[m.name] = take_json(report);
        report = nullptr;
      }
      return all;
    }
  } else if (cmd == "sweep") {
    DatasetPtr ds = load_dataset(o.dataset);
    check(bl_sweep(ds.p, cfg, out.c_str(), print_progress, nullptr, &report));
  } else if (cmd == "ablation") {
    DatasetPtr ds = load_dataset(o.dataset);
    check(bl_mask_ablation(ds.p, cfg, out.c_str(), print_progress, nullptr, &report));
  } else if (cmd == "verify" || cmd == "eval") {
    DatasetPtr ds = load_dataset(o.dataset);
    auto models = load_models(o.models, 1);
    std::vector<const bl_model*> ptrs;
    std::vector<const char*> names;
    for (const ModelPtr& m : models) {
      ptrs.push_back(m.p);
      names.push_back(m.name.c_str());
    }
    const int n = static_cast<int>(models.size());
    if (cmd == "verify")
      check(bl_verify(ptrs.data(), names.data(), n, ds.p, cfg, out.c_str(), &report));
    else
      check(bl_eval(ptrs.data(), names.data(), n, ds.p, cfg, out.c_str(), &report));
  } else if (cmd == "losses") {
    DatasetPtr ds = load_dataset(o.dataset);
    auto models = load_models(o.models, 1);
    check(bl_losses(models[0].p, ds.p, cfg, out.c_str(), &report));
    if (!o.report.empty()) {
      const fs::path written = fs::path(out) / "losses.json";
      if (fs::absolute(written) != fs::absolute(o.report)) fs::copy_file(written, o.report, fs::copy_options::overwrite_existing);
    }
  } else if (cmd == "saliency") {
    DatasetPtr ds = load_dataset(o.dataset);
    auto models = load_models(o.models, 1);
    check(bl_saliency(models[0].p, ds.p, cfg, out.c_str(), &report));
  } else if (cmd == "blend-preview") {
    DatasetPtr ds = load_dataset(o.dataset);
    check(bl_blend_preview(ds.p, cfg, out.c_str(), &report));
  } else if (cmd == "repro") {
    check(bl_repro(cfg, out.c_str(), o.f64_checks ? 1 : 0, print_progress, nullptr, &report));
  }
  return take_json(report);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic face-identity bias lab: data generation, encoder pretraining and analysis"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", bl_version());
  Options o;
  app.add_option("--threads", o.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  struct Spec {
    const char* name;
    const char* help;
    bool dataset, model, multi_model;
  };
  const std::vector<Spec> specs = {
      {"gen-dataset", "Generate a synthetic identity dataset shard", false, false, false},
      {"pretrain", "Pretrain an identity encoder with blended pseudo-positives", true, false, false},
      {"analyze", "Same/Swapped/Closest similarity distributions", true, true, true},
      {"sweep", "Pretrain across replace probabilities and report the gap for each", true, false, false},
      {"ablation", "Pretrain with each blend-mask variant and compare gaps", true, false, false},
      {"verify", "Ten-fold verification accuracy on a held-out dataset", true, true, true},
      {"losses", "Evaluate the face-swap loss suite with the analytic blender", true, true, false},
      {"saliency", "Occlusion saliency maps and their inner-face mass", true, true, false},
      {"eval", "Identity and attribute swap metrics", true, true, true},
      {"repro", "Run the whole pipeline end to end", false, false, false},
      {"blend-preview", "Write the images of one pseudo-positive construction", true, false, false},
  };
  std::string out_alias;
  for (const Spec& s : specs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->allow_extras();
    sub->add_option("--config", o.config_path, "TOML run configuration");
    sub->add_option("--seed", o.seed, "Master seed for data, training and analysis");
    sub->add_option("--threads", o.threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
    sub->add_flag("--f64-checks", o.f64_checks, "Also run the 64-bit gradient-check suite");
    if (std::string(s.name) == "losses") {
      sub->add_option("--report", o.report, "Path of the JSON loss report");
      sub->add_option("--out", o.out, "Output directory (default: the report's directory)");
      sub->add_option("--pairs", o.pairs, "Number of sampled pairs")->check(CLI::PositiveNumber);
    } else {
      sub->add_option("--out", o.out, "Output directory")->required();
    }
    if (s.dataset) sub->add_option("--dataset", o.dataset, "Dataset shard directory")->required();
    if (s.model)
      sub->add_option("--model", o.models, s.multi_model ? "Checkpoint directory, optionally name=DIR (repeatable)"
                                                          : "Checkpoint directory")
          ->required()
          ->expected(s.multi_model ? -1 : 1);
    if (std::string(s.name) == "pretrain") sub->add_option("--p", o.p, "Replace probability")->check(CLI::Range(0.0, 1.0));
    if (std::string(s.name) == "eval" || std::string(s.name) == "verify")
      sub->add_option("--pairs", o.pairs, "Number of evaluation pairs")->check(CLI::PositiveNumber);
    if (std::string(s.name) == "blend-preview") sub->add_option("--index", o.index, "Anchor sample index");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"status", BL_ERR_CONFIG}, {"error", e.what()}}.dump() << "\n";
    return BL_ERR_CONFIG;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string cmd = sub->get_name();
  o.overrides = sub->remaining();
  if (cmd == "losses" && o.out.empty()) {
    require_flag(o.report, "--report or --out");
    o.out = fs::path(o.report).has_parent_path() ? fs::path(o.report).parent_path().string() : ".";
  }
  bl_set_threads(o.threads);

  try {
    const std::string config = resolve_config(cmd, o);
    fs::create_directories(o.out);
    json summary = run_command(cmd, o, config);
    if (o.f64_checks && cmd != "repro") {
      char* gc = nullptr;
      check(bl_gradient_checks(config.c_str(), (fs::path(o.out) / "gradcheck").string().c_str(), &gc));
      summary["gradcheck"] = take_json(gc);
    }
    check(bl_write_manifest(o.out.c_str(), cmd.c_str(), config.c_str()));
    std::cout << summary.dump(2) << "\n";
    if (o.f64_checks) {
      if (!summary["gradcheck"].value("passed", false)) throw Failure{BL_ERR_INVARIANT, "gradient checks exceeded the tolerance"};
    }
    return 0;
  } catch (const Failure& f) {
    const json err = {{"tool_version", bl_version()}, {"command", cmd}, {"status", f.status}, {"error", f.message}};
    std::cerr << err.dump() << "\n";
    std::error_code ec;
    if (!o.out.empty() && fs::is_directory(o.out, ec)) {
      std::ofstream(fs::path(o.out) / "error.json") << err.dump(2) << "\n";
    }
    return f.status;
  } catch (const std::exception& e) {
    std::cerr << json{{"command", cmd}, {"status", BL_ERR_INTERNAL}, {"error", e.what()}}.dump() << "\n";
    return BL_ERR_INTERNAL;
  }
}

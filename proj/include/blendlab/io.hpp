#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "blendlab/analysis.hpp"
#include "blendlab/arcloss.hpp"
#include "blendlab/swaplosses.hpp"
#include "blendlab/synthfaces.hpp"

namespace blendlab {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kShardFormatVersion = 1;
inline constexpr int kCheckpointFormatVersion = 1;

// Config <-> JSON. Readers start from defaults, reject unknown keys and wrong types, then validate.
json to_json(const SynthConfig& c);
json to_json(const BlendConfig& c);
json to_json(const MarginConfig& c);
json to_json(const PretrainConfig& c);
json to_json(const LossWeights& c);
void read_into(const json& j, SynthConfig& c);
void read_into(const json& j, BlendConfig& c);
void read_into(const json& j, MarginConfig& c);
void read_into(const json& j, PretrainConfig& c);
void read_into(const json& j, LossWeights& c);

struct AnalysisSettings {
  std::uint64_t seed = 1;
  int anchors_per_identity = 1;
  std::vector<double> sweep_p = {0.0, 0.25, 0.5, 0.75, 1.0};
  int heldout_identities = 100;
  int heldout_images_per_identity = 20;
  int verify_pairs = 2000;
  int eval_pairs = 500;
  int loss_pairs = 100;
  int saliency_images = 50;
  std::vector<int> saliency_sizes;  // empty: scaled defaults
  int saliency_stride = 2;
  double saliency_fill = 0.5;
  int preview_index = 0;

  void validate() const;
};

/// Every section of a run. A top-level `seed`, when present, seeds data, pretraining and analysis;
/// margin.K follows data.num_identities unless given explicitly.
struct RunConfig {
  SynthConfig data;
  BlendConfig blend;
  MarginConfig margin;
  PretrainConfig pretrain;  // its blend member mirrors `blend`
  LossWeights losses;
  Reduction reduction = Reduction::kSum;
  AnalysisSettings analysis;
  std::uint64_t seed = 1;
};

json to_json(const AnalysisSettings& c);
void read_into(const json& j, AnalysisSettings& c);
json to_json(const RunConfig& c);
RunConfig run_config_from_json(const json& j);
/// Held-out identities for verification: same generator, independent seed.
SynthConfig heldout_config(const RunConfig& c);

/// meta.json plus one little-endian raw file per tensor class.
void save_dataset(const IdentityDataset& ds, const fs::path& dir);
IdentityDataset load_dataset(const fs::path& dir);

/// model.json, weights.f32 and training_log.csv.
void save_checkpoint(const EncoderCheckpoint& ck, const fs::path& dir);
EncoderCheckpoint load_checkpoint(const fs::path& dir);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);
void write_json(const fs::path& path, const json& j);

std::string sha256_hex(const fs::path& path);

/// Hashes every regular file under `dir` (except the manifest) in path order; no timestamps.
void write_manifest(const fs::path& dir, const std::string& command, const json& config, std::uint64_t seed);

json to_json(const DistributionReport& r);
json to_json(const MetricTable& t);
json to_json(const LossReport& r);
json to_json(const EpochLog& l);

/// Fixed-precision rendering so CSV output is stable across platforms.
std::string format_number(double v);
void write_distribution_csv(const fs::path& path, const DistributionReport& r);
void write_histogram_csv(const fs::path& path, const DistributionReport& r);
void write_saliency_csv(const fs::path& path, const SaliencyMap& m);

}  // namespace blendlab

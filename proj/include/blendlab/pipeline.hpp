#pragma once

#include <functional>
#include <span>
#include <string>

#include "blendlab/io.hpp"

namespace blendlab {

// Command-level drivers: each writes its artifacts under `out` and returns a JSON summary.
// Nothing written depends on wall-clock time or thread count.

using ProgressFn = std::function<void(const json& event)>;

struct NamedCheckpoint {
  std::string name;
  const EncoderCheckpoint* checkpoint = nullptr;
};

json run_gen_dataset(const RunConfig& cfg, const fs::path& out);
json run_pretrain(const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out, const ProgressFn& progress = {});
json run_analyze(const EncoderCheckpoint& ck, const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out);
json run_sweep(const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out, const ProgressFn& progress = {});
/// Pretrains one encoder per mask variant at the configured p and compares their gaps.
json run_mask_ablation(const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out,
                       const ProgressFn& progress = {});
json run_verify(std::span<const NamedCheckpoint> models, const IdentityDataset& heldout, const RunConfig& cfg,
                const fs::path& out);
/// Swap metrics with the analytic blender plus the mean identity loss on pseudo-positives.
json run_eval(std::span<const NamedCheckpoint> models, const IdentityDataset& ds, const RunConfig& cfg,
              const fs::path& out);
json run_losses(const EncoderCheckpoint& ck, const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out);
json run_saliency(const EncoderCheckpoint& ck, const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out);
json run_blend_preview(const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out);
json run_gradient_checks(const RunConfig& cfg, const fs::path& out);
/// Every stage above, end to end, in subdirectories of `out`.
json run_repro(const RunConfig& cfg, const fs::path& out, bool gradient_checks, const ProgressFn& progress = {});

/// Mean of 1 - <E(X), E(X_hat)> over `count` pseudo-positives X_hat of dataset images X.
double pseudo_positive_id_loss(const EncoderParams<float>& params, const IdentityDataset& ds, const BlendConfig& blend,
                               std::size_t count, std::uint64_t seed);

/// Evenly spaced sample indices used by the saliency command.
std::vector<std::size_t> saliency_indices(const IdentityDataset& ds, std::size_t count);

}  // namespace blendlab

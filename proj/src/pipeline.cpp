#include "blendlab/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "blendlab/common.hpp"
#include "blendlab/gradcheck.hpp"
#include "blendlab/parallel.hpp"

namespace blendlab {

namespace {

constexpr std::uint64_t kVerifyStream = 0x7E;
constexpr std::uint64_t kEvalStream = 0xE7;
constexpr std::uint64_t kContrastStream = 0xC7;
constexpr std::uint64_t kLossStream = 0x10;
constexpr std::uint64_t kPreviewStream = 0xB1;
constexpr double kLossPairSameFraction = 0.2;

DistributionConfig distribution_config(const RunConfig& cfg) {
  return {cfg.analysis.anchors_per_identity, cfg.analysis.seed, cfg.blend};
}

std::string p_label(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "p%.2f", p);
  return buf;
}

EncoderCheckpoint train(const IdentityDataset& ds, const RunConfig& cfg, double p, const BlendConfig& blend,
                        const std::string& label, const ProgressFn& progress) {
  PretrainConfig pc = cfg.pretrain;
  pc.p_replace = p;
  pc.blend = blend;
  return pretrain(ds, pc, cfg.margin, [&](const EpochLog& l) {
    if (progress)
      progress({{"stage", "pretrain"}, {"model", label}, {"epoch", l.epoch}, {"loss", l.loss}, {"accuracy", l.accuracy}});
  });
}

json checkpoint_summary(const EncoderCheckpoint& ck) {
  return {{"p_replace", ck.pretrain_cfg.p_replace},
          {"mask_variant", to_string(ck.pretrain_cfg.blend.mask_variant)},
          {"clean_train_accuracy", ck.clean_train_accuracy},
          {"final_epoch_loss", ck.training_log.empty() ? 0.0 : ck.training_log.back().loss}};
}

void write_pgm_normalized(const fs::path& path, const Mask& m) {
  Mask scaled = m;
  const float peak = *std::max_element(m.data.begin(), m.data.end());
  if (peak > 0.0F)
    for (float& v : scaled.data) v /= peak;
  write_pgm(path, scaled);
}

}  // namespace

json run_gen_dataset(const RunConfig& cfg, const fs::path& out) {
  const IdentityDataset ds = gen_dataset(cfg.data);
  save_dataset(ds, out);
  return {{"images", ds.samples.size()}, {"identities", ds.num_identities()}, {"seed", cfg.data.master_seed}};
}

json run_pretrain(const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out, const ProgressFn& progress) {
  const EncoderCheckpoint ck = train(ds, cfg, cfg.pretrain.p_replace, cfg.blend, p_label(cfg.pretrain.p_replace), progress);
  save_checkpoint(ck, out);
  return checkpoint_summary(ck);
}

json run_analyze(const EncoderCheckpoint& ck, const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out) {
  const DistributionReport rep = similarity_distributions(make_embedder(ck.params), ds, distribution_config(cfg));
  fs::create_directories(out);
  json j = to_json(rep);
  write_json(out / "distribution.json", j);
  write_distribution_csv(out / "similarities.csv", rep);
  write_histogram_csv(out / "histogram.dat", rep);
  return {{"gap", rep.gap},
          {"overlap", rep.overlap},
          {"mean_same", rep.same.mean},
          {"mean_swapped", rep.swapped.mean},
          {"mean_closest", rep.closest.mean}};
}

namespace {

struct SweepResult {
  json summary;
  std::map<double, EncoderCheckpoint> checkpoints;
};

SweepResult sweep_impl(const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out, const ProgressFn& progress) {
  SweepResult res;
  fs::create_directories(out);
  json rows = json::array();
  std::string csv = "p gap overlap mean_same mean_swapped clean_train_accuracy\n";
  for (double p : cfg.analysis.sweep_p) {
    const std::string label = p_label(p);
    EncoderCheckpoint ck = train(ds, cfg, p, cfg.blend, label, progress);
    save_checkpoint(ck, out / label);
    const DistributionReport rep = similarity_distributions(make_embedder(ck.params), ds, distribution_config(cfg));
    rows.push_back({{"p", p},
                    {"gap", rep.gap},
                    {"overlap", rep.overlap},
                    {"mean_same", rep.same.mean},
                    {"mean_swapped", rep.swapped.mean},
                    {"clean_train_accuracy", ck.clean_train_accuracy}});
    csv += format_number(p) + " " + format_number(rep.gap) + " " + format_number(rep.overlap) + " " +
           format_number(rep.same.mean) + " " + format_number(rep.swapped.mean) + " " +
           format_number(ck.clean_train_accuracy) + "\n";
    res.checkpoints.emplace(p, std::move(ck));
  }
  write_text(out / "sweep.dat", csv);
  res.summary = {{"points", rows}};
  write_json(out / "sweep.json", res.summary);
  return res;
}

}  // namespace

json run_sweep(const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out, const ProgressFn& progress) {
  return sweep_impl(ds, cfg, out, progress).summary;
}

namespace {

json ablation_impl(const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out, const ProgressFn& progress,
                   const EncoderCheckpoint* trained_intersection) {
  fs::create_directories(out);
  json rows = json::array();
  for (MaskVariant v : {MaskVariant::kIntersection, MaskVariant::kSourceOnly, MaskVariant::kCandidateOnly}) {
    BlendConfig b = cfg.blend;
    b.mask_variant = v;
    const bool reuse = v == MaskVariant::kIntersection && trained_intersection != nullptr;
    const EncoderCheckpoint ck = reuse ? *trained_intersection : train(ds, cfg, cfg.pretrain.p_replace, b, to_string(v), progress);
    save_checkpoint(ck, out / to_string(v));
    // Distributions are always measured with the configured (evaluation) blend.
    const DistributionReport rep = similarity_distributions(make_embedder(ck.params), ds, distribution_config(cfg));
    rows.push_back({{"mask_variant", to_string(v)}, {"gap", rep.gap}, {"overlap", rep.overlap},
                    {"clean_train_accuracy", ck.clean_train_accuracy}});
  }
  json j = {{"p_replace", cfg.pretrain.p_replace}, {"variants", rows}};
  write_json(out / "ablation.json", j);
  return j;
}

}  // namespace

json run_mask_ablation(const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out,
                       const ProgressFn& progress) {
  return ablation_impl(ds, cfg, out, progress, nullptr);
}

json run_verify(std::span<const NamedCheckpoint> models, const IdentityDataset& heldout, const RunConfig& cfg,
                const fs::path& out) {
  const auto pairs = make_verification_pairs(heldout, static_cast<std::size_t>(cfg.analysis.verify_pairs),
                                             derive_seed(cfg.analysis.seed, {kVerifyStream}));
  fs::create_directories(out);
  json rows = json::array();
  for (const NamedCheckpoint& m : models) {
    const auto scored = score_pairs(make_embedder(m.checkpoint->params), heldout, pairs);
    std::string csv = "a,b,same,similarity\n";
    for (std::size_t i = 0; i < pairs.size(); ++i)
      csv += std::to_string(pairs[i].a) + "," + std::to_string(pairs[i].b) + "," + (pairs[i].same ? "1" : "0") + "," +
             format_number(scored[i].similarity) + "\n";
    write_text(out / ("scores_" + m.name + ".csv"), csv);
    rows.push_back({{"encoder", m.name}, {"accuracy", verification_accuracy(scored)}});
  }
  json j = {{"pairs", pairs.size()}, {"folds", kVerificationFolds}, {"results", rows}};
  write_json(out / "verify.json", j);
  return j;
}

double pseudo_positive_id_loss(const EncoderParams<float>& params, const IdentityDataset& ds, const BlendConfig& blend,
                               std::size_t count, std::uint64_t seed) {
  const Embedder e = make_embedder(params);
  std::vector<double> losses(count);
  parallel_for(count, [&](std::size_t i) {
    Rng rng = make_rng(seed, {kContrastStream, i});
    const FaceSample& anchor = ds.samples[uniform_index(rng, ds.samples.size())];
    const BlendedSample b = pseudo_positive(anchor, ds, rng, blend);
    losses[i] = 1.0 - cosine_similarity(e(anchor.image), e(b.image));
  });
  double sum = 0.0;
  for (double v : losses) sum += v;
  return sum / static_cast<double>(count);
}

json run_eval(std::span<const NamedCheckpoint> models, const IdentityDataset& ds, const RunConfig& cfg,
              const fs::path& out) {
  std::vector<SwapPair> pairs;
  for (std::size_t i = 0; i < static_cast<std::size_t>(cfg.analysis.eval_pairs); ++i) {
    Rng rng = make_rng(cfg.analysis.seed, {kEvalStream, i});
    pairs.push_back(sample_pair(ds, rng, 0.0));
  }
  std::vector<NamedEmbedder> encoders;
  for (const NamedCheckpoint& m : models) encoders.push_back({m.name, make_embedder(m.checkpoint->params)});
  const OracleBlender blender(cfg.blend);
  const MetricTable table = swap_metrics(encoders, blender, pairs);

  json contrast = json::array();
  for (const NamedCheckpoint& m : models)
    contrast.push_back({{"encoder", m.name},
                        {"mean_id_loss", pseudo_positive_id_loss(m.checkpoint->params, ds, cfg.blend,
                                                                 static_cast<std::size_t>(cfg.analysis.eval_pairs),
                                                                 cfg.analysis.seed)}});
  fs::create_directories(out);
  json j = {{"metrics", to_json(table)}, {"pseudo_positive_id_loss", contrast}};
  write_json(out / "eval.json", j);
  std::string csv = "encoder,id_distance,id_distance_relative,attr_distance,attr_distance_relative\n";
  for (const MetricRow& r : table.rows)
    csv += r.encoder + "," + format_number(r.id_distance) + "," + format_number(r.id_distance_relative) + "," +
           format_number(r.attr_distance) + "," + format_number(r.attr_distance_relative) + "\n";
  write_text(out / "metrics.csv", csv);
  return j;
}

json run_losses(const EncoderCheckpoint& ck, const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out) {
  const EncoderParams<double> enc = ck.params.cast<double>();
  const OracleBlender blender(cfg.blend);
  const auto n = static_cast<std::size_t>(cfg.analysis.loss_pairs);
  std::vector<LossReport> reports(n);
  std::vector<SwapPair> pairs(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_rng(cfg.analysis.seed, {kLossStream, i});
    pairs[i] = sample_pair(ds, rng, kLossPairSameFraction);
  }
  parallel_for(n, [&](std::size_t i) { reports[i] = evaluate_losses(enc, pairs[i], blender, cfg.losses, cfg.reduction); });

  LossComponents mean;
  double mean_total = 0.0;
  json rows = json::array();
  std::string csv = "source,target,same_identity,id,mask,rec,cyc,total\n";
  for (std::size_t i = 0; i < n; ++i) {
    const LossReport& r = reports[i];
    mean.id_loss += r.components.id_loss / n;
    mean.mask_loss += r.components.mask_loss / n;
    mean.rec_loss += r.components.rec_loss / n;
    mean.cyc_loss += r.components.cyc_loss / n;
    mean_total += r.total / n;
    json row = to_json(r);
    row["source"] = pairs[i].source_index;
    row["target"] = pairs[i].target_index;
    row["same_identity"] = pairs[i].same_identity;
    rows.push_back(row);
    csv += std::to_string(pairs[i].source_index) + "," + std::to_string(pairs[i].target_index) + "," +
           (pairs[i].same_identity ? "1" : "0") + "," + format_number(r.components.id_loss) + "," +
           format_number(r.components.mask_loss) + "," + format_number(r.components.rec_loss) + "," +
           format_number(r.components.cyc_loss) + "," + format_number(r.total) + "\n";
  }
  json j = {{"weights", to_json(cfg.losses)},
            {"reduction", cfg.reduction == Reduction::kSum ? "sum" : "mean"},
            {"adversarial_included", false},
            {"mean", {{"id", mean.id_loss}, {"mask", mean.mask_loss}, {"rec", mean.rec_loss}, {"cyc", mean.cyc_loss},
                      {"total", mean_total}}},
            {"pairs", rows}};
  fs::create_directories(out);
  write_json(out / "losses.json", j);
  write_text(out / "losses.csv", csv);
  j.erase("pairs");
  return j;
}

std::vector<std::size_t> saliency_indices(const IdentityDataset& ds, std::size_t count) {
  const std::size_t n = ds.samples.size();
  count = std::min(count, n);
  std::vector<std::size_t> idx(count);
  for (std::size_t k = 0; k < count; ++k) idx[k] = k * n / count;
  return idx;
}

json run_saliency(const EncoderCheckpoint& ck, const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out) {
  const Embedder e = make_embedder(ck.params);
  SaliencyConfig sc{cfg.analysis.saliency_sizes, cfg.analysis.saliency_stride,
                    static_cast<float>(cfg.analysis.saliency_fill)};
  const auto idx = saliency_indices(ds, static_cast<std::size_t>(cfg.analysis.saliency_images));
  fs::create_directories(out);
  Mask mean_map(ds.config.image_size, ds.config.image_size, 1);
  std::vector<double> mean_acc(mean_map.pixels(), 0.0);
  double frac_sum = 0.0;
  std::string csv = "index,inner_fraction\n";
  std::vector<int> sizes;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const FaceSample& s = ds.samples[idx[k]];
    // The reference is the unoccluded image itself.
    const SaliencyMap m = occlusion_saliency(e, s.image, s.image, sc);
    sizes = m.sizes_used;
    const double f = saliency_inner_fraction(m, s.inner_mask);
    frac_sum += f;
    csv += std::to_string(idx[k]) + "," + format_number(f) + "\n";
    for (std::size_t p = 0; p < mean_acc.size(); ++p) mean_acc[p] += m.values.data[p];
    if (k == 0) {
      write_saliency_csv(out / "saliency_first.csv", m);
      write_pgm_normalized(out / "saliency_first.pgm", m.values);
      write_ppm(out / "saliency_first_image.ppm", s.image);
    }
  }
  for (std::size_t p = 0; p < mean_acc.size(); ++p) mean_map.data[p] = static_cast<float>(mean_acc[p] / idx.size());
  write_saliency_csv(out / "saliency_mean.csv", SaliencyMap{mean_map, sizes, sc.stride, sc.fill});
  write_pgm_normalized(out / "saliency_mean.pgm", mean_map);
  write_text(out / "inner_fractions.csv", csv);
  json j = {{"images", idx.size()},
            {"sizes", sizes},
            {"stride", sc.stride},
            {"fill", sc.fill},
            {"mean_inner_fraction", frac_sum / static_cast<double>(idx.size())}};
  write_json(out / "saliency.json", j);
  return j;
}

json run_blend_preview(const IdentityDataset& ds, const RunConfig& cfg, const fs::path& out) {
  const auto k = static_cast<std::size_t>(cfg.analysis.preview_index);
  require(k < ds.samples.size(), "analysis.preview_index is outside the dataset", ErrorCode::kConfig);
  const FaceSample& anchor = ds.samples[k];
  Rng rng = make_rng(cfg.analysis.seed, {kPreviewStream, k});
  const BlendedSample b = pseudo_positive(anchor, ds, rng, cfg.blend);
  const FaceSample& cand = ds.samples[b.candidate_index];
  fs::create_directories(out);
  write_ppm(out / "anchor.ppm", anchor.image);
  write_ppm(out / "candidate.ppm", cand.image);
  write_ppm(out / "candidate_recolored.ppm", transfer_color(anchor, cand, cfg.blend));
  write_pgm(out / "blend_mask.pgm", b.blend_mask);
  write_ppm(out / "blended.ppm", b.image);
  json j = {{"anchor_index", k}, {"anchor_id", b.anchor_id}, {"candidate_index", b.candidate_index},
            {"candidate_id", b.candidate_id}, {"blend", to_json(cfg.blend)}};
  write_json(out / "preview.json", j);
  return j;
}

json run_gradient_checks(const RunConfig& cfg, const fs::path& out) {
  GradientSuiteConfig gc;
  gc.base_seed = cfg.seed;
  const GradientSuiteReport rep = run_gradient_suite(gc);
  json rows = json::array();
  for (const auto& e : rep.entries)
    rows.push_back({{"objective", e.name},
                    {"max_rel_error", e.report.max_rel_error},
                    {"checked", e.report.checked},
                    {"skipped_kinks", e.report.skipped_kinks},
                    {"worst", e.report.worst}});
  json j = {{"precision", "f64"}, {"seeds", gc.seeds},       {"h", gc.h},
            {"tolerance", gc.tolerance}, {"max_rel_error", rep.max_rel_error}, {"passed", rep.passed},
            {"objectives", rows}};
  fs::create_directories(out);
  write_json(out / "gradcheck.json", j);
  return j;
}

json run_repro(const RunConfig& cfg, const fs::path& out, bool gradient_checks, const ProgressFn& progress) {
  auto stage = [&](const char* name) {
    if (progress) progress({{"stage", name}});
  };
  const json config = to_json(cfg);
  auto finish = [&](const fs::path& dir, const char* command) { write_manifest(dir, command, config, cfg.seed); };
  json summary;

  stage("gen-dataset");
  const IdentityDataset ds = gen_dataset(cfg.data);
  save_dataset(ds, out / "data");
  finish(out / "data", "gen-dataset");
  const IdentityDataset heldout = gen_dataset(heldout_config(cfg));
  save_dataset(heldout, out / "heldout");
  finish(out / "heldout", "gen-dataset");

  stage("sweep");
  RunConfig sweep_cfg = cfg;
  for (double p : {0.0, cfg.pretrain.p_replace})
    if (std::find(sweep_cfg.analysis.sweep_p.begin(), sweep_cfg.analysis.sweep_p.end(), p) ==
        sweep_cfg.analysis.sweep_p.end())
      sweep_cfg.analysis.sweep_p.push_back(p);
  std::sort(sweep_cfg.analysis.sweep_p.begin(), sweep_cfg.analysis.sweep_p.end());
  SweepResult sweep = sweep_impl(ds, sweep_cfg, out / "sweep", progress);
  finish(out / "sweep", "sweep");
  summary["sweep"] = sweep.summary;

  const EncoderCheckpoint& conventional = sweep.checkpoints.at(0.0);
  const EncoderCheckpoint& blended = sweep.checkpoints.at(cfg.pretrain.p_replace);
  const std::vector<NamedCheckpoint> both = {{"p0", &conventional}, {"blend", &blended}};

  stage("analyze");
  for (const NamedCheckpoint& m : both) {
    summary["analyze"][m.name] = run_analyze(*m.checkpoint, ds, cfg, out / "analyze" / m.name);
    finish(out / "analyze" / m.name, "analyze");
  }

  stage("ablation");
  const EncoderCheckpoint* intersection =
      cfg.blend.mask_variant == MaskVariant::kIntersection ? &blended : nullptr;
  summary["ablation"] = ablation_impl(ds, cfg, out / "ablation", progress, intersection);
  finish(out / "ablation", "pretrain");

  stage("verify");
  summary["verify"] = run_verify(both, heldout, cfg, out / "verify");
  finish(out / "verify", "verify");

  stage("eval");
  summary["eval"] = run_eval(both, ds, cfg, out / "eval");
  finish(out / "eval", "eval");

  stage("saliency");
  for (const NamedCheckpoint& m : both) {
    summary["saliency"][m.name] = run_saliency(*m.checkpoint, ds, cfg, out / "saliency" / m.name);
    finish(out / "saliency" / m.name, "saliency");
  }

  stage("losses");
  summary["losses"] = run_losses(blended, ds, cfg, out / "losses");
  finish(out / "losses", "losses");

  stage("blend-preview");
  summary["blend_preview"] = run_blend_preview(ds, cfg, out / "preview");
  finish(out / "preview", "blend-preview");

  if (gradient_checks) {
    stage("gradcheck");
    summary["gradcheck"] = run_gradient_checks(cfg, out / "gradcheck");
    finish(out / "gradcheck", "gradcheck");
  }
  write_json(out / "summary.json", summary);
  return summary;
}

}  // namespace blendlab

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "blendlab/arcloss.hpp"
#include "blendlab/blendpipe.hpp"
#include "blendlab/swaplosses.hpp"
#include "blendlab/synthfaces.hpp"

namespace blendlab {

/// Any image -> embedding map. Must be pure and safe to call concurrently.
using Embedder = std::function<std::vector<double>(const Image&)>;

Embedder make_embedder(const EncoderParams<float>& params);

/// Cosine similarity clamped to [-1, 1]; bitwise-identical vectors give exactly 1.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

inline constexpr int kHistogramBins = 100;  // width 0.02 over [-1, 1]

struct Histogram {
  std::array<std::size_t, kHistogramBins> counts{};
  void add(double v);
  std::size_t total() const;
};

struct PopulationStats {
  double mean = 0.0;
  double stddev = 0.0;
};

PopulationStats population_stats(std::span<const double> v);
/// Sum over bins of min(p_a, p_b) for the two normalised histograms.
double overlap_coefficient(const Histogram& a, const Histogram& b);

struct DistributionReport {
  std::vector<double> sims_same;
  std::vector<double> sims_swapped;
  std::vector<double> sims_closest;
  Histogram hist_same, hist_swapped, hist_closest;
  PopulationStats same, swapped, closest;
  double gap = 0.0;  // mean(same) - mean(swapped)
  double overlap = 0.0;
};

struct DistributionConfig {
  int anchors_per_identity = 1;
  std::uint64_t seed = 1;
  BlendConfig blend;
};

DistributionReport similarity_distributions(const Embedder& encoder, const IdentityDataset& dataset,
                                            const DistributionConfig& cfg);

struct GapPoint {
  double p = 0.0;
  double gap = 0.0;
  double overlap = 0.0;
  double mean_same = 0.0;
  double mean_swapped = 0.0;
  double clean_train_accuracy = 0.0;
};

using CheckpointCallback = std::function<void(double p, const EncoderCheckpoint&)>;

/// Trains one encoder per p (same seeds otherwise) and summarises each distribution report.
std::vector<GapPoint> gap_sweep(const IdentityDataset& dataset, std::span<const double> p_values,
                                const PretrainConfig& pcfg, const MarginConfig& mcfg, const DistributionConfig& dcfg,
                                const CheckpointCallback& on_checkpoint = {});

struct VerificationPair {
  std::size_t a = 0;
  std::size_t b = 0;
  bool same = false;
};

/// Balanced same/different pairs drawn from the dataset (meant to be a held-out one).
std::vector<VerificationPair> make_verification_pairs(const IdentityDataset& dataset, std::size_t count,
                                                      std::uint64_t seed);

struct ScoredPair {
  double similarity = 0.0;
  bool same = false;
};

std::vector<ScoredPair> score_pairs(const Embedder& encoder, const IdentityDataset& dataset,
                                    std::span<const VerificationPair> pairs);

inline constexpr int kVerificationFolds = 10;

/// Ten-fold cross-validated accuracy with an exhaustive threshold search on each training split.
double verification_accuracy(std::span<const ScoredPair> pairs);

struct MetricRow {
  std::string encoder;
  double id_distance = 0.0;
  double id_distance_relative = 0.0;
  double attr_distance = 0.0;
  double attr_distance_relative = 0.0;
};

struct MetricTable {
  std::vector<MetricRow> rows;
  std::size_t pairs = 0;
};

struct NamedEmbedder {
  std::string name;
  Embedder embed;
};

/// d / (d + d_other), with 0/0 read as the symmetric value 0.5.
double relative_distance(double d_near, double d_other);

MetricTable swap_metrics(std::span<const NamedEmbedder> encoders, const Swapper& swapper,
                         std::span<const SwapPair> pairs);

struct SaliencyConfig {
  std::vector<int> sizes;  // empty: default_occluder_sizes(image side)
  int stride = 2;
  float fill = 0.5F;
};

/// Sizes {16,...,56} scaled from a 128-pixel reference side, rounded to even.
std::vector<int> default_occluder_sizes(int image_size);

struct SaliencyMap {
  Mask values;
  std::vector<int> sizes_used;
  int stride = 0;
  float fill = 0.0F;
};

SaliencyMap occlusion_saliency(const Embedder& encoder, const Image& image, const Image& reference,
                               const SaliencyConfig& cfg);

double saliency_inner_fraction(const SaliencyMap& map, const Mask& inner_mask);

}  // namespace blendlab

#include "blendlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "blendlab/common.hpp"
#include "blendlab/parallel.hpp"

namespace blendlab {

namespace {

constexpr std::uint64_t kAnchorStream = 0xA1;
constexpr std::uint64_t kSwapStream = 0x5A;
constexpr std::uint64_t kPairStream = 0x9A;

}  // namespace

Embedder make_embedder(const EncoderParams<float>& params) {
  auto shared = std::make_shared<const EncoderParams<float>>(params);
  return [shared](const Image& img) {
    EncoderTrace<float> tr;
    forward_one(*shared, img.data.data(), tr);
    return std::vector<double>(tr.embedding.begin(), tr.embedding.end());
  };
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "cosine similarity of vectors with different lengths");
  if (std::equal(a.begin(), a.end(), b.begin(), b.end())) return 1.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

void Histogram::add(double v) {
  const int bin = std::clamp(static_cast<int>(std::floor((v + 1.0) / 0.02)), 0, kHistogramBins - 1);
  ++counts[static_cast<std::size_t>(bin)];
}

std::size_t Histogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

PopulationStats population_stats(std::span<const double> v) {
  PopulationStats s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

double overlap_coefficient(const Histogram& a, const Histogram& b) {
  const double ta = static_cast<double>(a.total());
  const double tb = static_cast<double>(b.total());
  if (ta == 0.0 || tb == 0.0) return 0.0;
  double o = 0.0;
  for (int i = 0; i < kHistogramBins; ++i)
    o += std::min(static_cast<double>(a.counts[static_cast<std::size_t>(i)]) / ta,
                  static_cast<double>(b.counts[static_cast<std::size_t>(i)]) / tb);
  return o;
}

DistributionReport similarity_distributions(const Embedder& encoder, const IdentityDataset& dataset,
                                            const DistributionConfig& cfg) {
  dataset.validate();
  require(cfg.anchors_per_identity >= 1, "anchors_per_identity must be >= 1", ErrorCode::kConfig);
  const std::size_t n = dataset.samples.size();

  // Every image gets its embedding and one blended counterpart, seeded per image.
  std::vector<std::vector<double>> emb(n), emb_swapped(n);
  std::vector<std::size_t> candidate_of(n);
  parallel_for(n, [&](std::size_t k) {
    emb[k] = encoder(dataset.samples[k].image);
    Rng rng = make_rng(cfg.seed, {kSwapStream, k});
    const BlendedSample b = pseudo_positive(dataset.samples[k], dataset, rng, cfg.blend);
    emb_swapped[k] = encoder(b.image);
    candidate_of[k] = b.candidate_index;
  });

  DistributionReport rep;
  for (std::size_t id = 0; id < dataset.by_identity.size(); ++id) {
    const auto& imgs = dataset.by_identity[id];
    require(imgs.size() >= 2, "identity " + std::to_string(id) + " has fewer than 2 images");
    require(static_cast<std::size_t>(cfg.anchors_per_identity) <= imgs.size(),
            "anchors_per_identity exceeds the images of identity " + std::to_string(id), ErrorCode::kConfig);
    std::vector<std::size_t> order(imgs);
    Rng rng = make_rng(cfg.seed, {kAnchorStream, id});
    for (int a = 0; a < cfg.anchors_per_identity; ++a) {
      const std::size_t pick = static_cast<std::size_t>(a) + uniform_index(rng, order.size() - static_cast<std::size_t>(a));
      std::swap(order[static_cast<std::size_t>(a)], order[pick]);
      const std::size_t anchor = order[static_cast<std::size_t>(a)];
      for (std::size_t k : imgs) {
        rep.sims_same.push_back(cosine_similarity(emb[anchor], emb[k]));
        rep.sims_swapped.push_back(cosine_similarity(emb[anchor], emb_swapped[k]));
      }
      rep.sims_closest.push_back(cosine_similarity(emb[anchor], emb[candidate_of[anchor]]));
    }
  }
  for (double v : rep.sims_same) rep.hist_same.add(v);
  for (double v : rep.sims_swapped) rep.hist_swapped.add(v);
  for (double v : rep.sims_closest) rep.hist_closest.add(v);
  rep.same = population_stats(rep.sims_same);
  rep.swapped = population_stats(rep.sims_swapped);
  rep.closest = population_stats(rep.sims_closest);
  rep.gap = rep.same.mean - rep.swapped.mean;
  rep.overlap = overlap_coefficient(rep.hist_same, rep.hist_swapped);
  return rep;
}

std::vector<GapPoint> gap_sweep(const IdentityDataset& dataset, std::span<const double> p_values,
                                const PretrainConfig& pcfg, const MarginConfig& mcfg, const DistributionConfig& dcfg,
                                const CheckpointCallback& on_checkpoint) {
  std::vector<GapPoint> out;
  for (double p : p_values) {
    require(p >= 0.0 && p <= 1.0, "sweep p values must lie in [0,1]", ErrorCode::kConfig);
    PretrainConfig cfg = pcfg;
    cfg.p_replace = p;
    const EncoderCheckpoint ckpt = pretrain(dataset, cfg, mcfg);
    if (on_checkpoint) on_checkpoint(p, ckpt);
    const DistributionReport rep = similarity_distributions(make_embedder(ckpt.params), dataset, dcfg);
    out.push_back({p, rep.gap, rep.overlap, rep.same.mean, rep.swapped.mean, ckpt.clean_train_accuracy});
  }
  return out;
}

std::vector<VerificationPair> make_verification_pairs(const IdentityDataset& dataset, std::size_t count,
                                                      std::uint64_t seed) {
  std::vector<VerificationPair> pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, {kPairStream, i});
    // Alternate same/different so the set is balanced.
    const SwapPair p = sample_pair(dataset, rng, i % 2 == 0 ? 1.0 : 0.0);
    pairs.push_back({p.source_index, p.target_index, p.same_identity});
  }
  return pairs;
}

std::vector<ScoredPair> score_pairs(const Embedder& encoder, const IdentityDataset& dataset,
                                    std::span<const VerificationPair> pairs) {
  std::vector<std::size_t> needed;
  for (const auto& p : pairs) {
    require(p.a < dataset.samples.size() && p.b < dataset.samples.size(), "verification pair index out of range");
    needed.push_back(p.a);
    needed.push_back(p.b);
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
  std::vector<std::vector<double>> emb(dataset.samples.size());
  parallel_for(needed.size(), [&](std::size_t i) { emb[needed[i]] = encoder(dataset.samples[needed[i]].image); });
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({cosine_similarity(emb[p.a], emb[p.b]), p.same});
  return out;
}

namespace {

// Best accuracy threshold over `train` (sorted ascending), predicting "same" when sim >= threshold.
double best_threshold(const std::vector<ScoredPair>& train) {
  const std::size_t n = train.size();
  std::size_t total_same = 0;
  for (const auto& p : train) total_same += p.same ? 1 : 0;
  // Threshold above every value: everything predicted "different".
  double best_t = std::numeric_limits<double>::infinity();
  std::size_t best_correct = n - total_same;
  std::size_t same_below = 0;
  std::size_t diff_below = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || train[i].similarity != train[i - 1].similarity) {
      // Candidate threshold train[i].similarity: below it -> "different", at/above -> "same".
      const std::size_t correct = diff_below + (total_same - same_below);
      if (correct > best_correct) {
        best_correct = correct;
        best_t = train[i].similarity;
      }
    }
    (train[i].same ? same_below : diff_below) += 1;
  }
  return best_t;
}

}  // namespace

double verification_accuracy(std::span<const ScoredPair> pairs) {
  require(pairs.size() >= static_cast<std::size_t>(kVerificationFolds),
          "verification needs at least one pair per fold");
  // Fold membership comes from the sorted order, which makes the result independent of input order.
  std::vector<ScoredPair> sorted(pairs.begin(), pairs.end());
  std::sort(sorted.begin(), sorted.end(), [](const ScoredPair& a, const ScoredPair& b) {
    return a.similarity != b.similarity ? a.similarity < b.similarity : a.same < b.same;
  });
  double acc_sum = 0.0;
  for (int fold = 0; fold < kVerificationFolds; ++fold) {
    std::vector<ScoredPair> train, test;
    for (std::size_t i = 0; i < sorted.size(); ++i)
      (static_cast<int>(i % kVerificationFolds) == fold ? test : train).push_back(sorted[i]);
    require(!test.empty() && !train.empty(), "empty verification fold");
    const double t = best_threshold(train);
    std::size_t correct = 0;
    for (const auto& p : test) correct += ((p.similarity >= t) == p.same) ? 1 : 0;
    acc_sum += static_cast<double>(correct) / static_cast<double>(test.size());
  }
  return acc_sum / kVerificationFolds;
}

double relative_distance(double d_near, double d_other) {
  const double denom = d_near + d_other;
  if (denom <= 0.0) return 0.5;
  return std::clamp(d_near / denom, 0.0, 1.0);
}

MetricTable swap_metrics(std::span<const NamedEmbedder> encoders, const Swapper& swapper,
                         std::span<const SwapPair> pairs) {
  MetricTable table;
  table.pairs = pairs.size();
  require(!pairs.empty(), "swap metrics need at least one pair");
  struct PairOutput {
    Image y;
    double attr = 0.0, attr_rel = 0.0;
  };
  std::vector<PairOutput> outputs(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const SwapPair& p = pairs[i];
    require(p.source.id_label != p.target.id_label, "swap metric pairs must have differing identities");
    const SwapOutput out =
        swapper.swap(to_double(p.source.image), p.source.inner_mask, to_double(p.target.image), p.target.inner_mask);
    outputs[i].y = to_float(out.image);
    // Ground-truth attributes of Y are the target's only if every pixel outside the blend
    // mask's support is the target's own pixel.
    const auto ch = static_cast<std::size_t>(p.target.image.channels);
    for (std::size_t k = 0; k < out.image.data.size(); ++k)
      if (out.mask.data[k / ch] == 0.0F)
        require(out.image.data[k] == static_cast<double>(p.target.image.data[k]),
                "swapper output differs from the target outside its blend mask");
    const std::vector<double>& z_y = p.target.z_attr;
    double d_tgt = 0.0, d_src = 0.0;
    for (std::size_t k = 0; k < z_y.size(); ++k) {
      d_tgt += (z_y[k] - p.target.z_attr[k]) * (z_y[k] - p.target.z_attr[k]);
      d_src += (z_y[k] - p.source.z_attr[k]) * (z_y[k] - p.source.z_attr[k]);
    }
    outputs[i].attr = std::sqrt(d_tgt);
    outputs[i].attr_rel = relative_distance(std::sqrt(d_tgt), std::sqrt(d_src));
  });

  for (const NamedEmbedder& enc : encoders) {
    std::vector<double> id_d(pairs.size()), id_r(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
      const auto e_y = enc.embed(outputs[i].y);
      const double d_src = 1.0 - cosine_similarity(e_y, enc.embed(pairs[i].source.image));
      const double d_tgt = 1.0 - cosine_similarity(e_y, enc.embed(pairs[i].target.image));
      id_d[i] = d_src;
      id_r[i] = relative_distance(d_src, d_tgt);
    });
    MetricRow row;
    row.encoder = enc.name;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      row.id_distance += id_d[i];
      row.id_distance_relative += id_r[i];
      row.attr_distance += outputs[i].attr;
      row.attr_distance_relative += outputs[i].attr_rel;
    }
    const double inv = 1.0 / static_cast<double>(pairs.size());
    row.id_distance *= inv;
    row.id_distance_relative *= inv;
    row.attr_distance *= inv;
    row.attr_distance_relative *= inv;
    table.rows.push_back(row);
  }
  return table;
}

std::vector<int> default_occluder_sizes(int image_size) {
  std::vector<int> sizes;
  for (int ref : {16, 24, 32, 40, 48, 56}) {
    const double scaled = ref * static_cast<double>(image_size) / 128.0;
    int even = 2 * static_cast<int>(std::lround(scaled / 2.0));
    sizes.push_back(std::clamp(even, 2, image_size));
  }
  return sizes;
}

namespace {

std::vector<int> occluder_positions(int side, int size, int stride) {
  std::vector<int> pos;
  for (int p = 0; p + size <= side; p += stride) pos.push_back(p);
  if (pos.empty() || pos.back() + size < side) pos.push_back(side - size);
  return pos;
}

}  // namespace

SaliencyMap occlusion_saliency(const Embedder& encoder, const Image& image, const Image& reference,
                               const SaliencyConfig& cfg) {
  require(image.same_shape(reference), "saliency: image and reference shapes differ");
  require(cfg.stride >= 1, "saliency stride must be >= 1", ErrorCode::kConfig);
  const int h = image.height;
  const int w = image.width;
  SaliencyMap out;
  out.sizes_used = cfg.sizes.empty() ? default_occluder_sizes(std::min(h, w)) : cfg.sizes;
  out.stride = cfg.stride;
  out.fill = cfg.fill;
  for (int s : out.sizes_used) {
    require(s >= 1 && s <= std::min(h, w), "occluder size must lie in [1, image side]", ErrorCode::kConfig);
    require(cfg.stride <= s, "saliency stride exceeds an occluder size and would leave gaps", ErrorCode::kConfig);
  }

  const std::vector<double> ref_emb = encoder(reference);
  const double base = cosine_similarity(ref_emb, encoder(image));
  std::vector<double> total(image.pixels(), 0.0);

  for (int size : out.sizes_used) {
    const std::vector<int> ys = occluder_positions(h, size, cfg.stride);
    const std::vector<int> xs = occluder_positions(w, size, cfg.stride);
    std::vector<double> drops(ys.size() * xs.size());
    parallel_for(drops.size(), [&](std::size_t k) {
      const int y0 = ys[k / xs.size()];
      const int x0 = xs[k % xs.size()];
      Image occluded = image;
      for (int y = y0; y < y0 + size; ++y)
        for (int x = x0; x < x0 + size; ++x)
          for (int c = 0; c < image.channels; ++c) occluded.at(y, x, c) = cfg.fill;
      drops[k] = std::max(0.0, base - cosine_similarity(ref_emb, encoder(occluded)));
    });
    std::vector<double> acc(image.pixels(), 0.0);
    std::vector<int> coverage(image.pixels(), 0);
    for (std::size_t k = 0; k < drops.size(); ++k) {
      const int y0 = ys[k / xs.size()];
      const int x0 = xs[k % xs.size()];
      for (int y = y0; y < y0 + size; ++y)
        for (int x = x0; x < x0 + size; ++x) {
          acc[static_cast<std::size_t>(y) * w + x] += drops[k];
          ++coverage[static_cast<std::size_t>(y) * w + x];
        }
    }
    for (std::size_t p = 0; p < acc.size(); ++p) {
      require(coverage[p] > 0, "occluder grid leaves a pixel uncovered");
      total[p] += acc[p] / coverage[p];
    }
  }
  out.values = Mask(h, w, 1);
  for (std::size_t p = 0; p < total.size(); ++p)
    out.values.data[p] = static_cast<float>(total[p] / static_cast<double>(out.sizes_used.size()));
  return out;
}

double saliency_inner_fraction(const SaliencyMap& map, const Mask& inner_mask) {
  require(map.values.height == inner_mask.height && map.values.width == inner_mask.width,
          "saliency map and mask dimensions differ");
  double inner = 0.0, all = 0.0;
  for (std::size_t p = 0; p < map.values.pixels(); ++p) {
    inner += static_cast<double>(map.values.data[p]) * inner_mask.data[p];
    all += map.values.data[p];
  }
  return all > 0.0 ? inner / all : 0.0;
}

}  // namespace blendlab

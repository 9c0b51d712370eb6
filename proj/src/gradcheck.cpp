#include "blendlab/gradcheck.hpp"

#include <algorithm>

#include "blendlab/arcloss.hpp"
#include "blendlab/common.hpp"
#include "blendlab/swaplosses.hpp"
#include "blendlab/synthfaces.hpp"

namespace blendlab {

namespace {

constexpr std::uint64_t kSuiteStream = 0x6C;

std::uint64_t combine(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ (b + 0x9E3779B97F4A7C15ULL)); }

std::vector<double> uniform_vector(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * uniform01(rng);
  return v;
}

void merge(GradCheckReport& acc, const GradCheckReport& r, int seed) {
  if (r.max_rel_error >= acc.max_rel_error) {
    acc.max_rel_error = r.max_rel_error;
    acc.worst = r.worst + " seed " + std::to_string(seed);
  }
  acc.checked += r.checked;
  acc.skipped_kinks += r.skipped_kinks;
}

}  // namespace

GradientSuiteReport run_gradient_suite(const GradientSuiteConfig& cfg) {
  require(cfg.seeds >= 1 && cfg.coords >= 1 && cfg.h > 0.0, "invalid gradient suite config", ErrorCode::kConfig);

  SynthConfig sc;
  sc.image_size = cfg.image_size;
  sc.num_identities = 4;
  sc.images_per_identity = 2;
  sc.master_seed = cfg.base_seed;
  const IdentityDataset data = gen_dataset(sc);
  const OracleBlender blender;

  std::vector<GradientSuiteEntry> entries = {{"encoder.params", {}}, {"encoder.input", {}}, {"margin", {}},
                                             {"id", {}},             {"mask", {}},          {"rec", {}},
                                             {"cyc", {}},            {"total", {}}};
  auto entry = [&](const char* name) -> GradCheckReport& {
    return std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.name == name; })->report;
  };

  for (int s = 0; s < cfg.seeds; ++s) {
    const std::uint64_t seed = derive_seed(cfg.base_seed, {kSuiteStream, static_cast<std::uint64_t>(s)});
    Rng rng = make_rng(seed, {0});
    EncoderShape shape;
    shape.image_size = cfg.image_size;
    shape.num_classes = 6;
    EncoderParams<double> enc = EncoderParams<float>::init(shape, seed).cast<double>();
    // Non-zero biases so every branch of the encoder is exercised.
    for (auto* b : {&enc.conv1_b, &enc.conv2_b, &enc.fc_b})
      for (double& v : b->data) v = 0.05 * standard_normal(rng);
    const std::size_t npx = static_cast<std::size_t>(cfg.image_size) * cfg.image_size * 3;
    const std::vector<double> image = uniform_vector(rng, npx, 0.0, 1.0);
    const std::vector<double> w = uniform_vector(rng, static_cast<std::size_t>(shape.d_emb), -1.0, 1.0);

    // Encoder map, probed through the scalar <w, E(x)>.
    auto project = [&](const EncoderParams<double>& p, const double* x, ParamGrads<double>* pg, double* dx) {
      EncoderTrace<double> tr;
      forward_one(p, x, tr);
      double v = 0.0;
      for (std::size_t k = 0; k < w.size(); ++k) v += w[k] * tr.embedding[k];
      if (pg || dx) {
        ParamGrads<double> scratch = ParamGrads<double>::zeros(p.shape);
        backward_one(p, tr, w.data(), pg ? *pg : scratch, dx);
      }
      return Evaluation{v, tr.relu_pattern};
    };
    ParamObjective fp = [&](const EncoderParams<double>& p, ParamGrads<double>* g) {
      if (g) *g = ParamGrads<double>::zeros(p.shape);
      return project(p, image.data(), g, nullptr);
    };
    merge(entry("encoder.params"), finite_diff_check(fp, enc, cfg.h, cfg.coords, seed), s);
    VectorObjective fx = [&](std::span<const double> x, std::vector<double>* g) {
      if (g) g->assign(x.size(), 0.0);
      return project(enc, x.data(), nullptr, g ? g->data() : nullptr);
    };
    merge(entry("encoder.input"), finite_diff_check(fx, image, cfg.h, cfg.coords, seed), s);

    // Margin loss over raw embeddings and head rows jointly.
    {
      const int b = 5, d = 8, k = 6;
      MarginConfig mc;
      mc.K = k;
      std::vector<int> labels(b);
      for (int& l : labels) l = static_cast<int>(uniform_index(rng, k));
      std::vector<double> x0 = uniform_vector(rng, static_cast<std::size_t>((b + k) * d), -1.0, 1.0);
      VectorObjective fm = [&](std::span<const double> x, std::vector<double>* g) {
        Tensor<double> emb({b, d}), head({k, d});
        std::copy_n(x.begin(), b * d, emb.data.begin());
        std::copy_n(x.begin() + b * d, k * d, head.data.begin());
        const auto r = margin_loss<double>(emb, labels, head, mc);
        if (g) {
          g->assign(r.d_embeddings.data.begin(), r.d_embeddings.data.end());
          g->insert(g->end(), r.d_head.data.begin(), r.d_head.data.end());
        }
        return Evaluation{static_cast<double>(r.loss), 0};
      };
      merge(entry("margin"), finite_diff_check(fm, x0, cfg.h, cfg.coords, seed), s);
    }

    // Swap-loss terms on a same-identity pair so the reconstruction branch is active.
    SwapPair pair;
    pair.source_index = data.by_identity[0][0];
    pair.target_index = data.by_identity[0][1];
    pair.source = data.samples[pair.source_index];
    pair.target = data.samples[pair.target_index];
    pair.same_identity = true;
    const ImageD xs = to_double(pair.source.image);
    const ImageD xt = to_double(pair.target.image);
    std::vector<double> y0 = xt.data;
    for (double& v : y0) v += 0.1 * standard_normal(rng);
    const std::vector<double> m0 = uniform_vector(rng, pair.target.inner_mask.pixels(), 0.05, 0.95);
    const std::vector<double> gt = to_double(pair.target.inner_mask).data;
    const SwapOutput fwd = blender.swap(xs, pair.source.inner_mask, xt, pair.target.inner_mask);

    auto as_image = [&](std::span<const double> y) { return ImageD{xt.height, xt.width, xt.channels, {y.begin(), y.end()}}; };
    auto wrap = [](const LossValue& l, std::vector<double>* g) {
      if (g) *g = l.grad;
      return Evaluation{l.value, l.kink_signature};
    };
    VectorObjective f_id = [&](std::span<const double> y, std::vector<double>* g) {
      return wrap(id_loss(enc, xs.data, y, g != nullptr), g);
    };
    VectorObjective f_mask = [&](std::span<const double> m, std::vector<double>* g) {
      return wrap(mask_bce(m, gt, Reduction::kSum, g != nullptr), g);
    };
    VectorObjective f_rec = [&](std::span<const double> y, std::vector<double>* g) {
      return wrap(rec_loss(true, xt.data, y, Reduction::kSum, g != nullptr), g);
    };
    VectorObjective f_cyc = [&](std::span<const double> y, std::vector<double>* g) {
      return wrap(cycle_loss(blender, xt, pair.target.inner_mask, as_image(y), fwd.mask, Reduction::kSum, g != nullptr),
                  g);
    };
    merge(entry("id"), finite_diff_check(f_id, y0, cfg.h, cfg.coords, seed), s);
    merge(entry("mask"), finite_diff_check(f_mask, m0, cfg.h, cfg.coords, seed), s);
    merge(entry("rec"), finite_diff_check(f_rec, y0, cfg.h, cfg.coords, seed), s);
    merge(entry("cyc"), finite_diff_check(f_cyc, y0, cfg.h, cfg.coords, seed), s);

    std::vector<double> ym0 = y0;
    ym0.insert(ym0.end(), m0.begin(), m0.end());
    const LossWeights lw;
    VectorObjective f_total = [&](std::span<const double> x, std::vector<double>* g) {
      const auto y = x.first(y0.size());
      const auto m = x.subspan(y0.size());
      const LossReport rep = evaluate_losses(enc, pair, blender, as_image(y), m, fwd.mask, lw);
      if (g) {
        *g = rep.d_output;
        g->insert(g->end(), rep.d_mask.begin(), rep.d_mask.end());
      }
      std::uint64_t kink = id_loss(enc, xs.data, y, false).kink_signature;
      kink = combine(kink, mask_bce(m, gt, Reduction::kSum, false).kink_signature);
      kink = combine(kink, rec_loss(true, xt.data, y, Reduction::kSum, false).kink_signature);
      kink = combine(kink, cycle_loss(blender, xt, pair.target.inner_mask, as_image(y), fwd.mask, Reduction::kSum, false)
                               .kink_signature);
      return Evaluation{rep.total, kink};
    };
    merge(entry("total"), finite_diff_check(f_total, ym0, cfg.h, cfg.coords, seed), s);
  }

  GradientSuiteReport rep;
  rep.entries = std::move(entries);
  for (const auto& e : rep.entries) rep.max_rel_error = std::max(rep.max_rel_error, e.report.max_rel_error);
  rep.passed = rep.max_rel_error <= cfg.tolerance;
  return rep;
}

}  // namespace blendlab

#include "blendlab/swaplosses.hpp"

#include <algorithm>
#include <cmath>

#include "blendlab/common.hpp"

namespace blendlab {

namespace {

constexpr std::uint64_t kFnvOffset = 0xCBF29CE484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001B3ULL;

std::uint64_t mix_state(std::uint64_t h, int state) { return (h ^ static_cast<std::uint64_t>(state + 2)) * kFnvPrime; }

int sign_of(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

double reduce_scale(Reduction r, std::size_t n) { return r == Reduction::kMean ? 1.0 / static_cast<double>(n) : 1.0; }

void check_same_size(std::size_t a, std::size_t b, const char* what) {
  require(a == b, std::string(what) + ": shape mismatch");
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0))
    fail(ErrorCode::kConfig, "loss weights must be non-negative");
}

ImageD to_double(const Image& img) {
  ImageD out{img.height, img.width, img.channels, {}};
  out.data.assign(img.data.begin(), img.data.end());
  return out;
}

Image to_float(const ImageD& img) {
  Image out(img.height, img.width, img.channels);
  std::transform(img.data.begin(), img.data.end(), out.data.begin(), [](double v) { return static_cast<float>(v); });
  return out;
}

SwapOutput OracleBlender::swap(const ImageD& source, const Mask& source_mask, const ImageD& target,
                               const Mask& target_mask) const {
  require(source.data.size() == target.data.size() && source.height == target.height && source.width == target.width,
          "oracle blender: source and target dimensions differ");
  SwapOutput out;
  out.mask = make_blend_mask(source_mask, target_mask, cfg_);
  require(out.mask.height == source.height && out.mask.width == source.width,
          "oracle blender: mask dimensions differ from the images");
  out.image = {source.height, source.width, source.channels, std::vector<double>(source.data.size())};
  const auto ch = static_cast<std::size_t>(source.channels);
  for (std::size_t p = 0; p < out.mask.pixels(); ++p) {
    const double m = out.mask.data[p];
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t i = p * ch + c;
      out.image.data[i] = source.data[i] * m + target.data[i] * (1.0 - m);
    }
  }
  return out;
}

std::vector<double> OracleBlender::target_vjp(const ImageD& /*source*/, const Mask& source_mask,
                                              const ImageD& target, const Mask& target_mask,
                                              std::span<const double> cotangent) const {
  check_same_size(cotangent.size(), target.data.size(), "oracle blender vjp");
  const Mask m = make_blend_mask(source_mask, target_mask, cfg_);
  const auto ch = static_cast<std::size_t>(target.channels);
  std::vector<double> g(cotangent.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = cotangent[i] * (1.0 - static_cast<double>(m.data[i / ch]));
  return g;
}

LossValue id_loss(const EncoderParams<double>& encoder, std::span<const double> x_src, std::span<const double> y,
                  bool want_grad) {
  check_same_size(x_src.size(), y.size(), "id_loss");
  EncoderTrace<double> src_trace;
  EncoderTrace<double> y_trace;
  forward_one(encoder, x_src.data(), src_trace);
  forward_one(encoder, y.data(), y_trace);
  double dot = 0.0, dist2 = 0.0, norm_s = 0.0, norm_y = 0.0;
  for (std::size_t k = 0; k < src_trace.embedding.size(); ++k) {
    const double a = src_trace.embedding[k];
    const double b = y_trace.embedding[k];
    dot += a * b;
    dist2 += (a - b) * (a - b);
    norm_s += a * a;
    norm_y += b * b;
  }
  LossValue out;
  // For unit vectors 1 - <a,b> = |a - b|^2 / 2; the second form has no cancellation near cos = 1.
  const bool unit = std::abs(norm_s - 1.0) < 1e-6 && std::abs(norm_y - 1.0) < 1e-6;
  out.value = unit ? 0.5 * dist2 : 1.0 - dot;
  out.kink_signature = y_trace.relu_pattern;
  if (want_grad) {
    std::vector<double> d_emb(src_trace.embedding.size());
    for (std::size_t k = 0; k < d_emb.size(); ++k) d_emb[k] = -src_trace.embedding[k];
    ParamGrads<double> scratch = ParamGrads<double>::zeros(encoder.shape);
    out.grad.assign(y.size(), 0.0);
    backward_one(encoder, y_trace, d_emb.data(), scratch, out.grad.data());
  }
  return out;
}

LossValue mask_bce(std::span<const double> pred, std::span<const double> gt, Reduction r, bool want_grad) {
  check_same_size(pred.size(), gt.size(), "mask_bce");
  const double scale = reduce_scale(r, pred.size());
  LossValue out;
  out.kink_signature = kFnvOffset;
  if (want_grad) out.grad.assign(pred.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred[i], kBceEps, 1.0 - kBceEps);
    const int state = pred[i] < kBceEps ? -1 : (pred[i] > 1.0 - kBceEps ? 1 : 0);
    out.kink_signature = mix_state(out.kink_signature, state);
    total -= gt[i] * std::log(p) + (1.0 - gt[i]) * std::log(1.0 - p);
    if (want_grad && state == 0) out.grad[i] = -scale * (gt[i] / p - (1.0 - gt[i]) / (1.0 - p));
  }
  out.value = total * scale;
  return out;
}

LossValue rec_loss(bool same_identity, std::span<const double> x_t, std::span<const double> y, Reduction r,
                   bool want_grad) {
  check_same_size(x_t.size(), y.size(), "rec_loss");
  LossValue out;
  out.kink_signature = kFnvOffset;
  if (want_grad) out.grad.assign(y.size(), 0.0);
  if (!same_identity) return out;
  const double scale = reduce_scale(r, y.size());
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double diff = y[i] - x_t[i];
    total += std::abs(diff);
    out.kink_signature = mix_state(out.kink_signature, sign_of(diff));
    if (want_grad) out.grad[i] = scale * sign_of(diff);
  }
  out.value = total * scale;
  return out;
}

LossValue cycle_loss(const Swapper& swapper, const ImageD& x_t, const Mask& x_t_mask, const ImageD& y,
                     const Mask& y_mask, Reduction r, bool want_grad) {
  check_same_size(x_t.data.size(), y.data.size(), "cycle_loss");
  const SwapOutput back = swapper.swap(x_t, x_t_mask, y, y_mask);
  check_same_size(back.image.data.size(), x_t.data.size(), "cycle_loss swapper output");
  const double scale = reduce_scale(r, x_t.data.size());
  LossValue out;
  out.kink_signature = kFnvOffset;
  std::vector<double> cot(x_t.data.size());
  double total = 0.0;
  for (std::size_t i = 0; i < cot.size(); ++i) {
    const double diff = x_t.data[i] - back.image.data[i];
    total += std::abs(diff);
    out.kink_signature = mix_state(out.kink_signature, sign_of(diff));
    cot[i] = -scale * sign_of(diff);
  }
  out.value = total * scale;
  if (want_grad) out.grad = swapper.target_vjp(x_t, x_t_mask, y, y_mask, cot);
  return out;
}

double total_loss(const LossComponents& c, const LossWeights& w) {
  return c.adversarial + c.mask_loss + w.lambda1 * c.id_loss + w.lambda2 * c.rec_loss + w.lambda3 * c.cyc_loss;
}

LossReport evaluate_losses(const EncoderParams<double>& encoder, const SwapPair& pair, const Swapper& swapper,
                           const ImageD& output, std::span<const double> mask, const Mask& cycle_mask,
                           const LossWeights& w, Reduction r) {
  w.validate();
  const ImageD x_s = to_double(pair.source.image);
  const ImageD x_t = to_double(pair.target.image);
  const ImageD gt_mask = to_double(pair.target.inner_mask);

  const LossValue id = id_loss(encoder, x_s.data, output.data);
  const LossValue bce = mask_bce(mask, gt_mask.data, r);
  const LossValue rec = rec_loss(pair.same_identity, x_t.data, output.data, r);
  const LossValue cyc = cycle_loss(swapper, x_t, pair.target.inner_mask, output, cycle_mask, r);

  LossReport rep;
  rep.components = {id.value, bce.value, rec.value, cyc.value, 0.0};
  rep.total = total_loss(rep.components, w);
  rep.d_output.resize(output.data.size());
  for (std::size_t i = 0; i < rep.d_output.size(); ++i)
    rep.d_output[i] = w.lambda1 * id.grad[i] + w.lambda2 * rec.grad[i] + w.lambda3 * cyc.grad[i];
  rep.d_mask = bce.grad;
  return rep;
}

LossReport evaluate_losses(const EncoderParams<double>& encoder, const SwapPair& pair, const Swapper& swapper,
                           const LossWeights& w, Reduction r) {
  const SwapOutput out = swapper.swap(to_double(pair.source.image), pair.source.inner_mask,
                                      to_double(pair.target.image), pair.target.inner_mask);
  const ImageD mask = to_double(out.mask);
  return evaluate_losses(encoder, pair, swapper, out.image, mask.data, out.mask, w, r);
}

SwapPair sample_pair(const IdentityDataset& dataset, Rng& rng, double p_same) {
  require(p_same >= 0.0 && p_same <= 1.0, "p_same must lie in [0,1]", ErrorCode::kConfig);
  const auto ids = static_cast<std::size_t>(dataset.num_identities());
  require(ids >= 2, "pair sampling needs at least two identities");
  SwapPair pair;
  if (uniform01(rng) < p_same) {
    const std::size_t id = uniform_index(rng, ids);
    const auto& imgs = dataset.by_identity[id];
    require(imgs.size() >= 2, "identity " + std::to_string(id) + " has fewer than 2 images for a same-identity pair");
    const std::size_t a = uniform_index(rng, imgs.size());
    std::size_t b = uniform_index(rng, imgs.size() - 1);
    if (b >= a) ++b;
    pair.source_index = imgs[a];
    pair.target_index = imgs[b];
    pair.same_identity = true;
  } else {
    const std::size_t ia = uniform_index(rng, ids);
    std::size_t ib = uniform_index(rng, ids - 1);
    if (ib >= ia) ++ib;
    const auto& sa = dataset.by_identity[ia];
    const auto& sb = dataset.by_identity[ib];
    pair.source_index = sa[uniform_index(rng, sa.size())];
    pair.target_index = sb[uniform_index(rng, sb.size())];
    pair.same_identity = false;
  }
  pair.source = dataset.samples[pair.source_index];
  pair.target = dataset.samples[pair.target_index];
  return pair;
}

Image composite_output(const Image& foreground, const Image& x_t, const Mask& mask) {
  return blend(foreground, x_t, mask);
}

}  // namespace blendlab

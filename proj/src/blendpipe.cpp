#include "blendlab/blendpipe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "blendlab/common.hpp"

namespace blendlab {

namespace {

constexpr double kSigmaFloor = 1e-6;
constexpr std::size_t kMinRegionPixels = 16;

// D65 reference white.
constexpr double kXn = 0.95047;
constexpr double kYn = 1.0;
constexpr double kZn = 1.08883;
constexpr double kDelta = 6.0 / 29.0;

double srgb_to_linear(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }
double linear_to_srgb(double c) {
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}
double lab_f(double t) {
  return t > kDelta * kDelta * kDelta ? std::cbrt(t) : t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}
double lab_f_inv(double t) { return t > kDelta ? t * t * t : 3.0 * kDelta * kDelta * (t - 4.0 / 29.0); }

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

void check_same_plane(const Image& a, const Image& b, const char* what) {
  require(a.height == b.height && a.width == b.width, std::string(what) + ": dimension mismatch");
}

}  // namespace

std::string to_string(MaskVariant v) {
  switch (v) {
    case MaskVariant::kIntersection: return "intersection";
    case MaskVariant::kSourceOnly: return "source_only";
    case MaskVariant::kCandidateOnly: return "candidate_only";
  }
  return "intersection";
}

std::string to_string(ColorRegion r) { return r == ColorRegion::kUnionMask ? "union_mask" : "whole_image"; }

MaskVariant parse_mask_variant(const std::string& s) {
  if (s == "intersection") return MaskVariant::kIntersection;
  if (s == "source_only") return MaskVariant::kSourceOnly;
  if (s == "candidate_only") return MaskVariant::kCandidateOnly;
  fail(ErrorCode::kConfig, "unknown mask variant '" + s + "'");
}

ColorRegion parse_color_region(const std::string& s) {
  if (s == "union_mask") return ColorRegion::kUnionMask;
  if (s == "whole_image") return ColorRegion::kWholeImage;
  fail(ErrorCode::kConfig, "unknown color region '" + s + "'");
}

void BlendConfig::validate() const {
  if (candidate_pool_size < 1) fail(ErrorCode::kConfig, "blend config: candidate_pool_size must be >= 1");
  if (blur_sigma < 0.0) fail(ErrorCode::kConfig, "blend config: blur_sigma must be > 0 (0 selects the default)");
}

int blur_kernel_size(double sigma) { return 2 * static_cast<int>(std::ceil(2.0 * sigma)) + 1; }

std::size_t nearest_landmark_candidate(const FaceSample& anchor, std::span<const FaceSample* const> pool) {
  require(!pool.empty(), "candidate pool is empty");
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const FaceSample& c = *pool[i];
    require(c.id_label != anchor.id_label, "candidate pool contains the anchor's identity");
    require(c.landmarks.size() == anchor.landmarks.size(), "landmark arrays differ in length");
    double d = 0.0;
    for (std::size_t k = 0; k < c.landmarks.size(); ++k) {
      const double dx = static_cast<double>(c.landmarks[k].x) - anchor.landmarks[k].x;
      const double dy = static_cast<double>(c.landmarks[k].y) - anchor.landmarks[k].y;
      d += dx * dx + dy * dy;
    }
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  return best;
}

Image rgb_to_lab(const Image& rgb) {
  require(rgb.channels == 3, "rgb_to_lab needs 3 channels");
  Image lab(rgb.height, rgb.width, 3);
  for (std::size_t p = 0; p < rgb.pixels(); ++p) {
    const double r = srgb_to_linear(rgb.data[3 * p]);
    const double g = srgb_to_linear(rgb.data[3 * p + 1]);
    const double b = srgb_to_linear(rgb.data[3 * p + 2]);
    const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    const double fx = lab_f(x / kXn);
    const double fy = lab_f(y / kYn);
    const double fz = lab_f(z / kZn);
    lab.data[3 * p] = static_cast<float>(116.0 * fy - 16.0);
    lab.data[3 * p + 1] = static_cast<float>(500.0 * (fx - fy));
    lab.data[3 * p + 2] = static_cast<float>(200.0 * (fy - fz));
  }
  return lab;
}

Image lab_to_rgb(const Image& lab) {
  require(lab.channels == 3, "lab_to_rgb needs 3 channels");
  Image rgb(lab.height, lab.width, 3);
  for (std::size_t p = 0; p < lab.pixels(); ++p) {
    const double fy = (lab.data[3 * p] + 16.0) / 116.0;
    const double fx = fy + lab.data[3 * p + 1] / 500.0;
    const double fz = fy - lab.data[3 * p + 2] / 200.0;
    const double x = kXn * lab_f_inv(fx);
    const double y = kYn * lab_f_inv(fy);
    const double z = kZn * lab_f_inv(fz);
    const double r = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    const double g = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    const double b = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    rgb.data[3 * p] = static_cast<float>(std::clamp(linear_to_srgb(std::max(r, 0.0)), 0.0, 1.0));
    rgb.data[3 * p + 1] = static_cast<float>(std::clamp(linear_to_srgb(std::max(g, 0.0)), 0.0, 1.0));
    rgb.data[3 * p + 2] = static_cast<float>(std::clamp(linear_to_srgb(std::max(b, 0.0)), 0.0, 1.0));
  }
  return rgb;
}

ColorStats lab_stats(const Image& lab, const Mask* region) {
  std::array<double, 3> sum{}, sum_sq{};
  std::size_t count = 0;
  for (std::size_t p = 0; p < lab.pixels(); ++p) {
    if (region != nullptr && region->data[p] < 0.5F) continue;
    ++count;
    for (int c = 0; c < 3; ++c) {
      const double v = lab.data[3 * p + c];
      sum[c] += v;
      sum_sq[c] += v * v;
    }
  }
  require(count >= kMinRegionPixels, "colour statistics region has fewer than 16 pixels");
  ColorStats s;
  for (int c = 0; c < 3; ++c) {
    s.mu[c] = sum[c] / count;
    s.sigma[c] = std::sqrt(std::max(0.0, sum_sq[c] / count - s.mu[c] * s.mu[c]));
  }
  return s;
}

Image transfer_color(const FaceSample& source, const FaceSample& candidate, const BlendConfig& cfg) {
  require(source.image.same_shape(candidate.image), "transfer_color: dimension mismatch");
  const Image src_lab = rgb_to_lab(source.image);
  Image cand_lab = rgb_to_lab(candidate.image);

  Mask region;
  const Mask* region_ptr = nullptr;
  if (cfg.color_region == ColorRegion::kUnionMask) {
    check_same_plane(source.inner_mask, candidate.inner_mask, "transfer_color");
    region = Mask(source.image.height, source.image.width, 1);
    for (std::size_t p = 0; p < region.pixels(); ++p)
      region.data[p] = std::max(source.inner_mask.data[p], candidate.inner_mask.data[p]) >= 0.5F ? 1.0F : 0.0F;
    region_ptr = &region;
  }
  const ColorStats s = lab_stats(src_lab, region_ptr);
  const ColorStats c = lab_stats(cand_lab, region_ptr);

  for (std::size_t p = 0; p < cand_lab.pixels(); ++p) {
    for (int k = 0; k < 3; ++k) {
      const double v = cand_lab.data[3 * p + k];
      cand_lab.data[3 * p + k] = static_cast<float>((v - c.mu[k]) / std::max(c.sigma[k], kSigmaFloor) * s.sigma[k] + s.mu[k]);
    }
  }
  return lab_to_rgb(cand_lab);
}

Mask gaussian_blur(const Mask& mask, double sigma) {
  require(sigma > 0.0, "blur sigma must be positive");
  require(mask.channels == 1, "blur expects a single-channel mask");
  const int ksize = blur_kernel_size(sigma);
  const int radius = ksize / 2;
  std::vector<double> kernel(static_cast<std::size_t>(ksize));
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += kernel[static_cast<std::size_t>(k + radius)];
  }
  for (double& w : kernel) w /= total;

  const int h = mask.height;
  const int w = mask.width;
  std::vector<double> rows(mask.pixels());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] * mask.at(y, reflect_index(x + k, w));
      rows[static_cast<std::size_t>(y) * w + x] = acc;
    }
  Mask out(h, w, 1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k)
        acc += kernel[static_cast<std::size_t>(k + radius)] * rows[static_cast<std::size_t>(reflect_index(y + k, h)) * w + x];
      out.at(y, x) = static_cast<float>(std::clamp(acc, 0.0, 1.0));
    }
  return out;
}

Mask make_blend_mask(const Mask& m_src, const Mask& m_cand, const BlendConfig& cfg) {
  check_same_plane(m_src, m_cand, "make_blend_mask");
  Mask base(m_src.height, m_src.width, 1);
  for (std::size_t p = 0; p < base.pixels(); ++p) {
    switch (cfg.mask_variant) {
      case MaskVariant::kIntersection: base.data[p] = m_src.data[p] * m_cand.data[p]; break;
      case MaskVariant::kSourceOnly: base.data[p] = m_src.data[p]; break;
      case MaskVariant::kCandidateOnly: base.data[p] = m_cand.data[p]; break;
    }
  }
  return gaussian_blur(base, cfg.sigma_for(m_src.width));
}

Image blend(const Image& src, const Image& cand, const Mask& mask) {
  require(src.same_shape(cand), "blend: source and candidate dimensions differ");
  check_same_plane(src, mask, "blend");
  require(mask.channels == 1, "blend: mask must be single-channel");
  Image out(src.height, src.width, src.channels);
  const auto ch = static_cast<std::size_t>(src.channels);
  for (std::size_t p = 0; p < src.pixels(); ++p) {
    const float m = mask.data[p];
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t i = p * ch + c;
      out.data[i] = std::clamp(src.data[i] * m + cand.data[i] * (1.0F - m), 0.0F, 1.0F);
    }
  }
  return out;
}

BlendedSample pseudo_positive(const FaceSample& anchor, const IdentityDataset& dataset, Rng& rng,
                              const BlendConfig& cfg, const PseudoPositiveOverrides& overrides) {
  cfg.validate();
  std::size_t cand_index = 0;
  if (overrides.forced_candidate) {
    cand_index = *overrides.forced_candidate;
    require(cand_index < dataset.samples.size(), "forced candidate index out of range");
  } else {
    const std::size_t own =
        anchor.id_label >= 0 && anchor.id_label < dataset.num_identities()
            ? dataset.by_identity[static_cast<std::size_t>(anchor.id_label)].size()
            : 0;
    const auto pool_size = static_cast<std::size_t>(cfg.candidate_pool_size);
    require(dataset.samples.size() - own >= pool_size, "not enough other-identity samples for the candidate pool");

    // Sampling without replacement, rejecting the anchor's identity.
    std::vector<std::size_t> picked;
    picked.reserve(pool_size);
    while (picked.size() < pool_size) {
      const std::size_t idx = uniform_index(rng, dataset.samples.size());
      if (dataset.samples[idx].id_label == anchor.id_label) continue;
      if (std::find(picked.begin(), picked.end(), idx) != picked.end()) continue;
      picked.push_back(idx);
    }
    std::vector<const FaceSample*> pool;
    pool.reserve(pool_size);
    for (std::size_t idx : picked) pool.push_back(&dataset.samples[idx]);
    cand_index = picked[nearest_landmark_candidate(anchor, pool)];
  }

  const FaceSample& cand = dataset.samples[cand_index];
  const Image recoloured = transfer_color(anchor, cand, cfg);
  BlendedSample out;
  out.blend_mask = make_blend_mask(anchor.inner_mask, cand.inner_mask, cfg);
  out.image = blend(anchor.image, recoloured, out.blend_mask);
  out.anchor_id = anchor.id_label;
  out.candidate_id = cand.id_label;
  out.candidate_index = cand_index;
  out.variant = cfg.mask_variant;
  return out;
}

}  // namespace blendlab

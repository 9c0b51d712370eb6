#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blendlab/image.hpp"
#include "blendlab/rng.hpp"
#include "blendlab/synthfaces.hpp"

namespace blendlab {

enum class MaskVariant { kIntersection, kSourceOnly, kCandidateOnly };
enum class ColorRegion { kUnionMask, kWholeImage };

std::string to_string(MaskVariant v);
std::string to_string(ColorRegion r);
MaskVariant parse_mask_variant(const std::string& s);
ColorRegion parse_color_region(const std::string& s);

struct BlendConfig {
  int candidate_pool_size = 100;
  MaskVariant mask_variant = MaskVariant::kIntersection;
  // <= 0 means 5% of the image side.
  double blur_sigma = 0.0;
  ColorRegion color_region = ColorRegion::kUnionMask;

  double sigma_for(int image_size) const { return blur_sigma > 0.0 ? blur_sigma : 0.05 * image_size; }
  void validate() const;
};

/// Odd kernel width 2*ceil(2*sigma)+1.
int blur_kernel_size(double sigma);

struct ColorStats {
  std::array<double, 3> mu{};
  std::array<double, 3> sigma{};
};

struct BlendedSample {
  Image image;
  Mask blend_mask;
  int anchor_id = 0;
  int candidate_id = 0;
  std::size_t candidate_index = 0;
  MaskVariant variant = MaskVariant::kIntersection;
};

/// Index into `pool` with the smallest summed squared landmark distance to `anchor`.
/// Ties go to the lowest index.
std::size_t nearest_landmark_candidate(const FaceSample& anchor, std::span<const FaceSample* const> pool);

// sRGB (D65) <-> CIELAB. lab_to_rgb clamps to [0,1].
Image rgb_to_lab(const Image& rgb);
Image lab_to_rgb(const Image& lab);

ColorStats lab_stats(const Image& lab, const Mask* region);

/// Candidate re-coloured so its Lab statistics over the configured region match the source's.
Image transfer_color(const FaceSample& source, const FaceSample& candidate, const BlendConfig& cfg);

Mask gaussian_blur(const Mask& mask, double sigma);
// Blur sigma resolves against the mask width when left at its default.
Mask make_blend_mask(const Mask& m_src, const Mask& m_cand, const BlendConfig& cfg);

/// src * mask + cand * (1 - mask), per pixel and channel.
Image blend(const Image& src, const Image& cand, const Mask& mask);

/// Test hook: when set, the candidate search is bypassed and this dataset index is used.
struct PseudoPositiveOverrides {
  std::optional<std::size_t> forced_candidate;
};

BlendedSample pseudo_positive(const FaceSample& anchor, const IdentityDataset& dataset, Rng& rng,
                              const BlendConfig& cfg, const PseudoPositiveOverrides& overrides = {});

}  // namespace blendlab

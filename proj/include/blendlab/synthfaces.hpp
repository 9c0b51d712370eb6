#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "blendlab/image.hpp"
#include "blendlab/rng.hpp"

namespace blendlab {

struct SynthConfig {
  int image_size = 32;
  int channels = 3;
  int num_identities = 200;
  int images_per_identity = 40;
  int d_id = 8;
  int d_attr = 6;
  double rho = 0.9;
  int landmark_count = 16;
  std::uint64_t master_seed = 1;

  // Throws Error(kConfig) on violation.
  void validate() const;
  bool operator==(const SynthConfig&) const = default;
};

struct Point2 {
  float x = 0.0F;
  float y = 0.0F;
  bool operator==(const Point2&) const = default;
};

struct IdentityProfile {
  int id_label = 0;
  std::vector<double> z_id;
  std::vector<double> attr_anchor;
};

struct FaceSample {
  Image image;                  // H x W x 3 in [0,1]
  std::vector<Point2> landmarks;  // 12 inner-boundary points then eyes (L, R), nose, mouth
  Mask inner_mask;              // H x W in [0,1]
  int id_label = 0;
  std::vector<double> z_attr;
};

struct IdentityDataset {
  SynthConfig config;
  std::vector<FaceSample> samples;
  std::vector<std::vector<std::size_t>> by_identity;  // identity -> sample indices

  int num_identities() const { return static_cast<int>(by_identity.size()); }
  // Checks index/sample consistency and the >= 2 images per identity rule.
  void validate() const;
};

inline constexpr int kBoundaryLandmarks = 12;
inline constexpr int kFeatureLandmarks = 4;

// Layout of z_id: coordinates 0-3 drive the inner ellipse (center, axes), 4 and 7 the
// inner colours, 5 and 6 the feature geometry. Perturbing only kFeatureGeometryDims
// moves feature landmarks while boundary landmarks stay fixed.
inline constexpr std::array<int, 2> kFeatureGeometryDims = {5, 6};

IdentityProfile sample_identity(Rng& rng, const SynthConfig& cfg, int id_label = 0);

FaceSample render_face(const IdentityProfile& profile, const std::vector<double>& z_attr,
                       const SynthConfig& cfg);

IdentityDataset gen_dataset(const SynthConfig& cfg);

// Attribute latent of image j of an identity; exposed so tests can check the correlation model.
std::vector<double> draw_attribute(const IdentityProfile& profile, const SynthConfig& cfg, int image_index);

}  // namespace blendlab

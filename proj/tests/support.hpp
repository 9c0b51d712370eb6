#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "blendlab/rng.hpp"
#include "blendlab/synthfaces.hpp"

namespace testing_support {

using namespace blendlab;

// Small dataset shared by tests that only need a handful of faces.
inline const IdentityDataset& small_dataset() {
  static const IdentityDataset ds = [] {
    SynthConfig cfg;
    cfg.image_size = 32;
    cfg.num_identities = 12;
    cfg.images_per_identity = 10;
    cfg.master_seed = 11;
    return gen_dataset(cfg);
  }();
  return ds;
}

inline const IdentityDataset& default_dataset() {
  static const IdentityDataset ds = gen_dataset(SynthConfig{});
  return ds;
}

inline Image random_image(Rng& rng, int h, int w, int c) {
  Image img(h, w, c);
  for (float& v : img.data) v = static_cast<float>(uniform01(rng));
  return img;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * standard_normal(rng);
  return v;
}

inline double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(double(a.data[i]) - b.data[i]));
  return m;
}

}  // namespace testing_support

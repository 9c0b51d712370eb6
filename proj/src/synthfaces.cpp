#include "blendlab/synthfaces.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "blendlab/common.hpp"
#include "blendlab/parallel.hpp"

namespace blendlab {

namespace {

constexpr std::uint64_t kIdentityStream = 0x1D;
constexpr std::uint64_t kAttributeStream = 0xA7;

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
double squash(double v) { return 2.0 * sigmoid(v) - 1.0; }  // (-1, 1)

struct Rgb {
  double r, g, b;
};

Rgb mix(const Rgb& a, const Rgb& b, double w) {
  return {a.r + (b.r - a.r) * w, a.g + (b.g - a.g) * w, a.b + (b.b - a.b) * w};
}

struct Ellipse {
  double cx, cy, rx, ry;  // normalized units

  // Approximate signed distance in pixels (negative inside).
  double signed_distance_px(double u, double v, double size) const {
    const double dx = (u - cx) / rx;
    const double dy = (v - cy) / ry;
    const double r = std::sqrt(dx * dx + dy * dy);
    if (r < 1e-9) return -std::min(rx, ry) * size;
    const double gx = dx / (rx * r);
    const double gy = dy / (ry * r);
    const double grad = std::sqrt(gx * gx + gy * gy);
    return (r - 1.0) / grad * size;
  }
};

struct Blob {
  double cx, cy, sx, sy;  // normalized units
  Rgb color;
  double strength;

  double weight(double u, double v) const {
    const double dx = (u - cx) / sx;
    const double dy = (v - cy) / sy;
    return strength * std::exp(-0.5 * (dx * dx + dy * dy));
  }
};

struct InnerGeometry {
  Ellipse face;
  Rgb skin;
  std::array<Blob, 4> features;  // left eye, right eye, nose, mouth
};

InnerGeometry inner_geometry(const std::vector<double>& z) {
  InnerGeometry g{};
  g.face = {0.5 + 0.035 * squash(z[0]), 0.56 + 0.03 * squash(z[1]), 0.20 + 0.04 * squash(z[2]),
            0.25 + 0.04 * squash(z[3])};
  g.skin = {0.45 + 0.45 * sigmoid(z[4]), 0.30 + 0.40 * sigmoid(z[7]),
            0.20 + 0.40 * sigmoid(0.5 * (z[4] - z[7]))};
  const auto& f = g.face;
  const double eye_dx = (0.40 + 0.14 * squash(z[5])) * f.rx;
  const double eye_y = f.cy - (0.32 - 0.10 * squash(z[5])) * f.ry;
  const double nose_y = f.cy + (0.08 + 0.10 * squash(z[6])) * f.ry;
  const double mouth_y = f.cy + (0.52 + 0.10 * squash(z[6])) * f.ry;
  const double mouth_w = (0.30 + 0.12 * squash(z[6])) * f.rx;
  const Rgb eye_color{0.08 + 0.25 * sigmoid(z[7]), 0.08 + 0.15 * sigmoid(z[7]), 0.12};
  const Rgb mouth_color{0.55 + 0.35 * sigmoid(-z[7]), 0.15, 0.20};
  const Rgb nose_color{g.skin.r * 0.7, g.skin.g * 0.7, g.skin.b * 0.7};
  g.features = {Blob{f.cx - eye_dx, eye_y, 0.035, 0.028, eye_color, 0.95},
                Blob{f.cx + eye_dx, eye_y, 0.035, 0.028, eye_color, 0.95},
                Blob{f.cx, nose_y, 0.025, 0.05, nose_color, 0.8},
                Blob{f.cx, mouth_y, mouth_w, 0.03, mouth_color, 0.9}};
  return g;
}

struct OuterGeometry {
  Ellipse head;
  Rgb background, head_skin, hair;
  double hair_line;  // normalized v above which head pixels are hair
};

OuterGeometry outer_geometry(const std::vector<double>& a) {
  OuterGeometry g{};
  g.background = {0.1 + 0.8 * sigmoid(a[0]), 0.1 + 0.8 * sigmoid(a[1]), 0.1 + 0.8 * sigmoid(0.8 * (a[0] - a[1]))};
  g.head = {0.5, 0.53, 0.34 + 0.06 * squash(a[2]), 0.43 - 0.03 * squash(a[2])};
  g.head_skin = {0.50 + 0.35 * sigmoid(a[5]), 0.38 + 0.30 * sigmoid(a[5]), 0.30 + 0.25 * sigmoid(-a[5])};
  g.hair = {0.05 + 0.70 * sigmoid(a[3]), 0.05 + 0.50 * sigmoid(a[4]), 0.05 + 0.40 * sigmoid(0.5 * (a[3] + a[4]))};
  const double head_top = g.head.cy - g.head.ry;
  g.hair_line = head_top + (0.18 + 0.14 * sigmoid(a[5] + a[2])) * 2.0 * g.head.ry;
  return g;
}

double smooth_inside(double signed_distance_px) { return std::clamp(0.5 - signed_distance_px, 0.0, 1.0); }

}  // namespace

void SynthConfig::validate() const {
  auto check = [](bool ok, const char* what) {
    if (!ok) fail(ErrorCode::kConfig, std::string("synth config: ") + what);
  };
  check(image_size >= 16, "image_size must be >= 16");
  check(image_size % 4 == 0, "image_size must be divisible by 4");
  check(channels == 3, "channels must be 3");
  check(rho >= 0.0 && rho <= 1.0, "rho must lie in [0,1]");
  check(num_identities >= 2, "num_identities must be >= 2");
  check(images_per_identity >= 2, "images_per_identity must be >= 2");
  check(d_id == 8, "d_id must be 8 (renderer consumes 8 identity coordinates)");
  check(d_attr == 6, "d_attr must be 6 (renderer consumes 6 attribute coordinates)");
  check(landmark_count == kBoundaryLandmarks + kFeatureLandmarks, "landmark_count must be 16");
}

void IdentityDataset::validate() const {
  std::size_t indexed = 0;
  for (std::size_t id = 0; id < by_identity.size(); ++id) {
    require(by_identity[id].size() >= 2, "identity " + std::to_string(id) + " has fewer than 2 images");
    for (std::size_t idx : by_identity[id]) {
      require(idx < samples.size(), "identity index points past the sample list");
      require(samples[idx].id_label == static_cast<int>(id), "identity index disagrees with sample label");
    }
    indexed += by_identity[id].size();
  }
  require(indexed == samples.size(), "identity index does not cover every sample exactly once");
}

IdentityProfile sample_identity(Rng& rng, const SynthConfig& cfg, int id_label) {
  IdentityProfile p;
  p.id_label = id_label;
  p.z_id.resize(static_cast<std::size_t>(cfg.d_id));
  p.attr_anchor.resize(static_cast<std::size_t>(cfg.d_attr));
  for (auto& v : p.z_id) v = standard_normal(rng);
  for (auto& v : p.attr_anchor) v = standard_normal(rng);
  return p;
}

FaceSample render_face(const IdentityProfile& profile, const std::vector<double>& z_attr, const SynthConfig& cfg) {
  require(profile.z_id.size() == static_cast<std::size_t>(cfg.d_id), "z_id length does not match d_id",
          ErrorCode::kConfig);
  require(z_attr.size() == static_cast<std::size_t>(cfg.d_attr), "z_attr length does not match d_attr",
          ErrorCode::kConfig);
  const int n = cfg.image_size;
  const double size = n;
  const InnerGeometry in = inner_geometry(profile.z_id);
  const OuterGeometry out = outer_geometry(z_attr);

  FaceSample s;
  s.image = Image(n, n, 3);
  s.inner_mask = Mask(n, n, 1);
  s.id_label = profile.id_label;
  s.z_attr = z_attr;

  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double u = (x + 0.5) / size;
      const double v = (y + 0.5) / size;
      const double m = smooth_inside(in.face.signed_distance_px(u, v, size));
      s.inner_mask.at(y, x) = static_cast<float>(m);
      Rgb c{};
      if (m > 0.0) {
        // Any pixel touched by the inner mask depends on z_id alone.
        c = in.skin;
        for (const Blob& b : in.features) c = mix(c, b.color, b.weight(u, v));
      } else {
        const double head = smooth_inside(out.head.signed_distance_px(u, v, size));
        const Ellipse hair_shell{out.head.cx, out.head.cy, out.head.rx * 1.08, out.head.ry * 1.06};
        const double shell = smooth_inside(hair_shell.signed_distance_px(u, v, size));
        const double hair = shell * std::clamp(0.5 - (v - out.hair_line) * size, 0.0, 1.0);
        c = mix(out.background, out.head_skin, head);
        c = mix(c, out.hair, hair);
      }
      s.image.at(y, x, 0) = static_cast<float>(std::clamp(c.r, 0.0, 1.0));
      s.image.at(y, x, 1) = static_cast<float>(std::clamp(c.g, 0.0, 1.0));
      s.image.at(y, x, 2) = static_cast<float>(std::clamp(c.b, 0.0, 1.0));
    }
  }

  s.landmarks.reserve(kBoundaryLandmarks + kFeatureLandmarks);
  constexpr double kTwoPi = 6.283185307179586;
  for (int k = 0; k < kBoundaryLandmarks; ++k) {
    const double phi = kTwoPi * k / kBoundaryLandmarks;
    s.landmarks.push_back({static_cast<float>((in.face.cx + in.face.rx * std::cos(phi)) * size),
                           static_cast<float>((in.face.cy + in.face.ry * std::sin(phi)) * size)});
  }
  for (const Blob& b : in.features)
    s.landmarks.push_back({static_cast<float>(b.cx * size), static_cast<float>(b.cy * size)});
  return s;
}

std::vector<double> draw_attribute(const IdentityProfile& profile, const SynthConfig& cfg, int image_index) {
  Rng rng = make_rng(cfg.master_seed, {kAttributeStream, static_cast<std::uint64_t>(profile.id_label),
                                       static_cast<std::uint64_t>(image_index)});
  const double noise_scale = std::sqrt(std::max(0.0, 1.0 - cfg.rho * cfg.rho));
  std::vector<double> z(profile.attr_anchor.size());
  for (std::size_t k = 0; k < z.size(); ++k) z[k] = cfg.rho * profile.attr_anchor[k] + noise_scale * standard_normal(rng);
  return z;
}

IdentityDataset gen_dataset(const SynthConfig& cfg) {
  cfg.validate();
  IdentityDataset ds;
  ds.config = cfg;
  const auto ids = static_cast<std::size_t>(cfg.num_identities);
  const auto per = static_cast<std::size_t>(cfg.images_per_identity);

  std::vector<IdentityProfile> profiles(ids);
  for (std::size_t i = 0; i < ids; ++i) {
    Rng rng = make_rng(cfg.master_seed, {kIdentityStream, i});
    profiles[i] = sample_identity(rng, cfg, static_cast<int>(i));
  }

  ds.samples.resize(ids * per);
  parallel_for(ds.samples.size(), [&](std::size_t k) {
    const std::size_t i = k / per;
    const std::size_t j = k % per;
    ds.samples[k] = render_face(profiles[i], draw_attribute(profiles[i], cfg, static_cast<int>(j)), cfg);
  });

  ds.by_identity.resize(ids);
  for (std::size_t i = 0; i < ids; ++i)
    for (std::size_t j = 0; j < per; ++j) ds.by_identity[i].push_back(i * per + j);
  return ds;
}

}  // namespace blendlab

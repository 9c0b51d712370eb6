#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace blendlab {

/// Row-major H x W x C float image. Masks are single-channel images.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0F)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  float& at(int y, int x, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::span<float> span() { return data; }
  std::span<const float> span() const { return data; }

  bool operator==(const Image&) const = default;
};

using Mask = Image;

// Portable pixmaps for visual inspection; values are clamped to [0,1] and quantized to 8 bits.
void write_ppm(const std::filesystem::path& path, const Image& rgb);
void write_pgm(const std::filesystem::path& path, const Image& gray);

}  // namespace blendlab

#include "blendlab/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "blendlab/common.hpp"

namespace blendlab {

namespace {

unsigned char quantize(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0F, 1.0F) * 255.0F));
}

void write_pnm(const std::filesystem::path& path, const Image& img, const char* magic) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kMissingInput, "cannot open " + path.string() + " for writing");
  out << magic << "\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.data.size());
  std::transform(img.data.begin(), img.data.end(), bytes.begin(), quantize);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image& rgb) {
  require(rgb.channels == 3, "PPM output needs a 3-channel image");
  write_pnm(path, rgb, "P6");
}

void write_pgm(const std::filesystem::path& path, const Image& gray) {
  require(gray.channels == 1, "PGM output needs a single-channel image");
  write_pnm(path, gray, "P5");
}

}  // namespace blendlab

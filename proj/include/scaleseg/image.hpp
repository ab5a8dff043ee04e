#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scaleseg/common.hpp"

namespace scaleseg {

// Single-channel raster with values in [0, 1].
struct MaskImage {
  int h = 0, w = 0;
  std::vector<float> pixels;

  MaskImage() = default;
  MaskImage(int h_, int w_) : h(h_), w(w_), pixels(static_cast<size_t>(h_) * w_, 0.f) {}

  float& at(int y, int x) { return pixels[static_cast<size_t>(y) * w + x]; }
  float at(int y, int x) const { return pixels[static_cast<size_t>(y) * w + x]; }
};

// Three grayscale feature planes (one per color channel) used as model
// conditioning input.
struct SceneImage {
  int h = 0, w = 0;
  std::vector<float> planes;  // 3 * h * w, plane-major

  SceneImage() = default;
  SceneImage(int h_, int w_) : h(h_), w(w_), planes(3 * static_cast<size_t>(h_) * w_, 0.f) {}

  float& at(int c, int y, int x) { return planes[(static_cast<size_t>(c) * h + y) * w + x]; }
  float at(int c, int y, int x) const { return planes[(static_cast<size_t>(c) * h + y) * w + x]; }
};

std::vector<uint8_t> binarize(const MaskImage& m, float threshold = 0.5f);

inline int positive_pixels(const MaskImage& m, float threshold = 0.5f) {
  int n = 0;
  for (float p : m.pixels) n += (p >= threshold) ? 1 : 0;
  return n;
}

// Binary PGM (P5). Written masks are binarized to {0, 255}.
void write_pgm(const std::string& path, const MaskImage& m, float threshold = 0.5f);
MaskImage read_pgm(const std::string& path);

// Binary PPM (P6) for 3-channel scene rasters.
void write_ppm(const std::string& path, const SceneImage& img);
SceneImage read_ppm(const std::string& path);

}  // namespace scaleseg

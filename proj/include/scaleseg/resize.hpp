#pragma once

#include <algorithm>
#include <cmath>

#include "scaleseg/common.hpp"

namespace scaleseg {

// Bilinear resize with the half-pixel (edge-clamped) sampling convention.
// Used for both residual downsampling and token-map upsampling.
template <typename S>
Grid3T<S> bilinear_resize(const Grid3T<S>& src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ShapeError("bilinear_resize: non-positive output size");
  if (src.h == out_h && src.w == out_w) return src;

  Grid3T<S> dst(out_h, out_w, src.d);
  const double sy = static_cast<double>(src.h) / out_h;
  const double sx = static_cast<double>(src.w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::clamp(y0, 0, src.h - 1);
    int y1c = std::clamp(y0 + 1, 0, src.h - 1);
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::clamp(x0, 0, src.w - 1);
      int x1c = std::clamp(x0 + 1, 0, src.w - 1);

      const S* p00 = src.at(y0c, x0c);
      const S* p01 = src.at(y0c, x1c);
      const S* p10 = src.at(y1c, x0c);
      const S* p11 = src.at(y1c, x1c);
      S* out = dst.at(oy, ox);
      for (int c = 0; c < src.d; ++c) {
        double top = p00[c] + wx * (p01[c] - p00[c]);
        double bot = p10[c] + wx * (p11[c] - p10[c]);
        out[c] = static_cast<S>(top + wy * (bot - top));
      }
    }
  }
  return dst;
}

}  // namespace scaleseg

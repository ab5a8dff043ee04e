#include "scaleseg/conv.hpp"

namespace scaleseg {

void conv2d_forward(const ConvSpec& spec, const float* weight, const float* bias, const float* x,
                    int h, int w, float* y) {
  const int oh = spec.out_extent(h);
  const int ow = spec.out_extent(w);
  for (int oc = 0; oc < spec.out_c; ++oc) {
    float* yp = y + static_cast<size_t>(oc) * oh * ow;
    for (int i = 0; i < oh * ow; ++i) yp[i] = bias[oc];
    for (int ic = 0; ic < spec.in_c; ++ic) {
      const float* xp = x + static_cast<size_t>(ic) * h * w;
      const float* wp = weight + ((static_cast<size_t>(oc) * spec.in_c + ic) * spec.k) * spec.k;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy0 = oy * spec.stride - spec.pad;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix0 = ox * spec.stride - spec.pad;
          float acc = 0.f;
          for (int ky = 0; ky < spec.k; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < spec.k; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= w) continue;
              acc += wp[ky * spec.k + kx] * xp[iy * w + ix];
            }
          }
          yp[oy * ow + ox] += acc;
        }
      }
    }
  }
}

void conv2d_backward(const ConvSpec& spec, const float* weight, const float* x, int h, int w,
                     const float* gy, float* gx, float* gw, float* gb) {
  const int oh = spec.out_extent(h);
  const int ow = spec.out_extent(w);
  for (int oc = 0; oc < spec.out_c; ++oc) {
    const float* gyp = gy + static_cast<size_t>(oc) * oh * ow;
    for (int i = 0; i < oh * ow; ++i) gb[oc] += gyp[i];
    for (int ic = 0; ic < spec.in_c; ++ic) {
      const float* xp = x + static_cast<size_t>(ic) * h * w;
      float* gxp = gx + static_cast<size_t>(ic) * h * w;
      const float* wp = weight + ((static_cast<size_t>(oc) * spec.in_c + ic) * spec.k) * spec.k;
      float* gwp = gw + ((static_cast<size_t>(oc) * spec.in_c + ic) * spec.k) * spec.k;
      for (int oy = 0; oy < oh; ++oy) {
        const int iy0 = oy * spec.stride - spec.pad;
        for (int ox = 0; ox < ow; ++ox) {
          const int ix0 = ox * spec.stride - spec.pad;
          const float g = gyp[oy * ow + ox];
          if (g == 0.f) continue;
          for (int ky = 0; ky < spec.k; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < spec.k; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= w) continue;
              gwp[ky * spec.k + kx] += g * xp[iy * w + ix];
              gxp[iy * w + ix] += g * wp[ky * spec.k + kx];
            }
          }
        }
      }
    }
  }
}

void upsample2x_forward(const float* x, int c, int h, int w, float* y) {
  const int oh = 2 * h, ow = 2 * w;
  for (int ch = 0; ch < c; ++ch) {
    const float* xp = x + static_cast<size_t>(ch) * h * w;
    float* yp = y + static_cast<size_t>(ch) * oh * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) yp[oy * ow + ox] = xp[(oy / 2) * w + (ox / 2)];
  }
}

void upsample2x_backward(const float* gy, int c, int h, int w, float* gx) {
  const int oh = 2 * h, ow = 2 * w;
  for (int ch = 0; ch < c; ++ch) {
    float* gxp = gx + static_cast<size_t>(ch) * h * w;
    const float* gyp = gy + static_cast<size_t>(ch) * oh * ow;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) gxp[(oy / 2) * w + (ox / 2)] += gyp[oy * ow + ox];
  }
}

}  // namespace scaleseg

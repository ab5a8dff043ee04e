#pragma once

#include <vector>

#include "scaleseg/common.hpp"

namespace scaleseg {

// Minimal CHW convolution kernels for the toy tokenizer. Weights are laid
// out (out_c, in_c, k, k); activations are channel-major planes.
struct ConvSpec {
  int in_c = 0;
  int out_c = 0;
  int k = 3;
  int stride = 1;
  int pad = 1;

  int weight_count() const { return out_c * in_c * k * k; }
  int out_extent(int n) const { return (n + 2 * pad - k) / stride + 1; }
};

void conv2d_forward(const ConvSpec& spec, const float* weight, const float* bias, const float* x,
                    int h, int w, float* y);

// Accumulates into gw/gb; writes gx (caller zeroes it first).
void conv2d_backward(const ConvSpec& spec, const float* weight, const float* x, int h, int w,
                     const float* gy, float* gx, float* gw, float* gb);

// Nearest-neighbor 2x upsampling of a C x h x w plane stack, and its adjoint.
void upsample2x_forward(const float* x, int c, int h, int w, float* y);
void upsample2x_backward(const float* gy, int c, int h, int w, float* gx);

inline void relu_forward(float* x, size_t n) {
  for (size_t i = 0; i < n; ++i) x[i] = x[i] > 0.f ? x[i] : 0.f;
}
inline void relu_backward(const float* y, float* g, size_t n) {
  for (size_t i = 0; i < n; ++i) g[i] = y[i] > 0.f ? g[i] : 0.f;
}
inline void sigmoid_forward(float* x, size_t n) {
  for (size_t i = 0; i < n; ++i) x[i] = 1.f / (1.f + std::exp(-x[i]));
}
inline void sigmoid_backward(const float* y, float* g, size_t n) {
  for (size_t i = 0; i < n; ++i) g[i] *= y[i] * (1.f - y[i]);
}

}  // namespace scaleseg

#include "scaleseg/codebook.hpp"

#include <cmath>
#include <limits>

namespace scaleseg {

void Codebook::validate() const {
  if (V < 2 || D < 1) throw ShapeError("codebook requires V >= 2 and D >= 1");
  if (vectors.size() != static_cast<size_t>(V) * D) throw ShapeError("codebook storage size mismatch");
  if (!all_finite(vectors)) throw DivergenceError("codebook contains non-finite entries");
}

int quantize_cell(std::span<const float> feature, const Codebook& codebook) {
  if (static_cast<int>(feature.size()) != codebook.D)
    throw ShapeError("feature dimension does not match codebook");
  for (float x : feature)
    if (!std::isfinite(x)) throw DivergenceError("non-finite feature in quantize_cell");

  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int v = 0; v < codebook.V; ++v) {
    const float* c = codebook.row(v);
    double dist = 0.0;
    for (int i = 0; i < codebook.D; ++i) {
      double diff = static_cast<double>(feature[i]) - static_cast<double>(c[i]);
      dist += diff * diff;
    }
    if (dist < best_dist) {  // strict: ties keep the lowest index
      best_dist = dist;
      best = v;
    }
  }
  return best;
}

Grid3 lookup_grid(const Codebook& codebook, const std::vector<int>& indices, int h, int w) {
  if (static_cast<size_t>(h) * w != indices.size()) throw ShapeError("lookup_grid: index count mismatch");
  Grid3 out(h, w, codebook.D);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int v = indices[static_cast<size_t>(y) * w + x];
      if (v < 0 || v >= codebook.V) throw ShapeError("token index out of codebook range");
      const float* src = codebook.row(v);
      float* dst = out.at(y, x);
      for (int i = 0; i < codebook.D; ++i) dst[i] = src[i];
    }
  return out;
}

}  // namespace scaleseg

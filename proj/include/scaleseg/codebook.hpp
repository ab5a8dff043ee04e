#pragma once

#include <span>
#include <vector>

#include "scaleseg/common.hpp"

namespace scaleseg {

// Shared visual embedding table. Row indices are the visual token IDs used
// across the tokenizer, vocabulary and sequence model.
struct Codebook {
  int V = 0;  // number of entries
  int D = 0;  // embedding dimension
  std::vector<float> vectors;  // V x D, row-major

  Codebook() = default;
  Codebook(int V_, int D_) : V(V_), D(D_), vectors(static_cast<size_t>(V_) * D_, 0.f) {}

  float* row(int v) { return vectors.data() + static_cast<size_t>(v) * D; }
  const float* row(int v) const { return vectors.data() + static_cast<size_t>(v) * D; }

  void validate() const;
};

// Nearest row by L2 distance; ties resolve to the lowest index.
int quantize_cell(std::span<const float> feature, const Codebook& codebook);

// Replaces each index of an h x w grid with its codebook row.
Grid3 lookup_grid(const Codebook& codebook, const std::vector<int>& indices, int h, int w);

}  // namespace scaleseg

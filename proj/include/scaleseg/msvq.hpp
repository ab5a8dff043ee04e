#pragma once

#include <optional>
#include <vector>

#include "scaleseg/codebook.hpp"
#include "scaleseg/common.hpp"
#include "scaleseg/schedule.hpp"

namespace scaleseg {

using LatentGrid = Grid3;

// Index grid for one scale.
struct TokenMap {
  int scale_index = 0;  // 1-based position in the schedule
  int h = 0, w = 0;
  std::vector<int> indices;  // row-major, values in [0, V)

  int at(int y, int x) const { return indices[static_cast<size_t>(y) * w + x]; }
};

struct MultiScaleTokenMaps {
  std::vector<TokenMap> maps;
  Schedule schedule;

  int total_tokens() const {
    int n = 0;
    for (const auto& m : maps) n += static_cast<int>(m.indices.size());
    return n;
  }
  void validate(int vocab_v) const;
};

// Residual decomposition record kept by the quantizer: the per-scale
// downsampled residuals it quantized and the accumulated reconstruction.
// Training consumes the residuals; tests check the accumulator against
// multi_scale_reconstruct.
struct QuantizeTrace {
  std::vector<Grid3> scale_residuals;  // at (h_k, w_k), pre-quantization
  LatentGrid accumulated;              // sum of upsampled lookups, full resolution
};

MultiScaleTokenMaps multi_scale_quantize(const LatentGrid& latent, const Codebook& codebook,
                                         const Schedule& schedule, QuantizeTrace* trace = nullptr);

LatentGrid multi_scale_reconstruct(const MultiScaleTokenMaps& maps, const Codebook& codebook);

// Reconstruction restricted to the first `scales` maps (later residuals
// treated as zero); scales == K reproduces the full reconstruction.
LatentGrid reconstruct_prefix(const MultiScaleTokenMaps& maps, const Codebook& codebook, int scales);

}  // namespace scaleseg

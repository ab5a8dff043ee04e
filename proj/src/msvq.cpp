#include "scaleseg/msvq.hpp"

#include <span>

#include "scaleseg/resize.hpp"

namespace scaleseg {

void MultiScaleTokenMaps::validate(int vocab_v) const {
  validate_schedule(schedule);
  if (maps.size() != schedule.size()) throw ShapeError("token maps do not match schedule length");
  for (size_t k = 0; k < maps.size(); ++k) {
    const auto& m = maps[k];
    if (m.h != schedule[k].h || m.w != schedule[k].w)
      throw ShapeError("token map " + std::to_string(k + 1) + " does not match schedule");
    if (m.indices.size() != static_cast<size_t>(m.h) * m.w)
      throw ShapeError("token map storage size mismatch");
    for (int v : m.indices)
      if (v < 0 || v >= vocab_v) throw ShapeError("token index out of codebook range");
  }
}

MultiScaleTokenMaps multi_scale_quantize(const LatentGrid& latent, const Codebook& codebook,
                                         const Schedule& schedule, QuantizeTrace* trace) {
  validate_schedule(schedule);
  const auto& last = schedule.back();
  if (last.h != latent.h || last.w != latent.w)
    throw ShapeError("schedule final scale " + format_shape(last.h, last.w, latent.d) +
                     " does not match latent " + format_shape(latent.h, latent.w, latent.d));
  if (latent.d != codebook.D) throw ShapeError("latent depth does not match codebook dimension");

  MultiScaleTokenMaps out;
  out.schedule = schedule;
  out.maps.reserve(schedule.size());

  Grid3 residual = latent;
  Grid3 accumulated(latent.h, latent.w, latent.d);

  for (size_t k = 0; k < schedule.size(); ++k) {
    const auto [h_k, w_k] = schedule[k];
    Grid3 down = bilinear_resize(residual, h_k, w_k);
    if (trace) trace->scale_residuals.push_back(down);

    TokenMap map;
    map.scale_index = static_cast<int>(k) + 1;
    map.h = h_k;
    map.w = w_k;
    map.indices.resize(static_cast<size_t>(h_k) * w_k);
    for (int y = 0; y < h_k; ++y)
      for (int x = 0; x < w_k; ++x)
        map.indices[static_cast<size_t>(y) * w_k + x] =
            quantize_cell(std::span<const float>(down.at(y, x), codebook.D), codebook);

    Grid3 up = bilinear_resize(lookup_grid(codebook, map.indices, h_k, w_k), latent.h, latent.w);
    for (size_t i = 0; i < residual.data.size(); ++i) {
      residual.data[i] -= up.data[i];
      accumulated.data[i] += up.data[i];
    }
    out.maps.push_back(std::move(map));
  }

  if (trace) trace->accumulated = std::move(accumulated);
  return out;
}

LatentGrid multi_scale_reconstruct(const MultiScaleTokenMaps& maps, const Codebook& codebook) {
  return reconstruct_prefix(maps, codebook, static_cast<int>(maps.maps.size()));
}

LatentGrid reconstruct_prefix(const MultiScaleTokenMaps& maps, const Codebook& codebook, int scales) {
  if (maps.maps.empty()) throw ShapeError("no token maps to reconstruct");
  if (scales < 1 || scales > static_cast<int>(maps.maps.size()))
    throw ShapeError("scale prefix out of range");
  maps.validate(codebook.V);

  const auto& final_dim = maps.schedule.back();
  LatentGrid out(final_dim.h, final_dim.w, codebook.D);
  for (int k = 0; k < scales; ++k) {
    const auto& m = maps.maps[k];
    Grid3 up = bilinear_resize(lookup_grid(codebook, m.indices, m.h, m.w), out.h, out.w);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += up.data[i];
  }
  return out;
}

}  // namespace scaleseg

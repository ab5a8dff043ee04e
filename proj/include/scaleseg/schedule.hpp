#pragma once

#include <string>
#include <vector>

#include "scaleseg/common.hpp"

namespace scaleseg {

struct ScaleDim {
  int h = 0;
  int w = 0;
  int cells() const { return h * w; }
  bool operator==(const ScaleDim&) const = default;
};

// Ordered list of token-map resolutions, coarse to fine. The last entry must
// match the latent grid produced by the tokenizer encoder.
using Schedule = std::vector<ScaleDim>;

inline Schedule square_schedule(const std::vector<int>& sides) {
  Schedule s;
  s.reserve(sides.size());
  for (int v : sides) s.push_back({v, v});
  return s;
}

// 680-token schedule for 16x16 latents (256px inputs at downsampling 16).
inline Schedule full_schedule() { return square_schedule({1, 2, 3, 4, 5, 6, 8, 10, 13, 16}); }

// 85-token schedule for 8x8 latents (32px inputs at downsampling 4).
inline Schedule toy_schedule() { return square_schedule({1, 2, 4, 8}); }

inline int token_count(const Schedule& s) {
  int n = 0;
  for (const auto& d : s) n += d.cells();
  return n;
}

inline void validate_schedule(const Schedule& s) {
  if (s.empty()) throw ShapeError("schedule must be nonempty");
  for (size_t k = 0; k < s.size(); ++k) {
    if (s[k].h <= 0 || s[k].w <= 0) throw ShapeError("schedule scales must be positive");
    if (k > 0 && s[k].cells() <= s[k - 1].cells())
      throw ShapeError("schedule must be strictly increasing in cell count");
  }
}

inline std::string schedule_to_string(const Schedule& s) {
  std::string out;
  for (size_t k = 0; k < s.size(); ++k) {
    if (k) out += ",";
    out += std::to_string(s[k].h);
    if (s[k].w != s[k].h) out += "x" + std::to_string(s[k].w);
  }
  return out;
}

// Parses "1,2,4,8" (square scales) or "1x1,2x3" (explicit h x w).
Schedule parse_schedule(const std::string& text);

}  // namespace scaleseg

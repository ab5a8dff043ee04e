#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace scaleseg {

// Error taxonomy: shape/contract violations, I/O failures, and numeric
// divergence are surfaced as distinct exception types so the CLI can map
// them to exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct DivergenceError : Error {
  using Error::Error;
};

// Deterministic RNG. Distributions are hand-rolled on top of a fixed-width
// generator so streams are reproducible independent of the standard library
// implementation.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [lo, hi] inclusive
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  double normal() {
    // Box-Muller; one value per call keeps the stream simple to reason about.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  Rng fork(uint64_t stream) {
    Rng r(state_ ^ (0xd1342543de82ef95ull * (stream + 1)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
};

// Dense h x w x d grid, row-major with the channel fastest. Used for latent
// feature maps and codebook lookups.
template <typename S>
struct Grid3T {
  int h = 0, w = 0, d = 0;
  std::vector<S> data;

  Grid3T() = default;
  Grid3T(int h_, int w_, int d_) : h(h_), w(w_), d(d_), data(static_cast<size_t>(h_) * w_ * d_, S(0)) {}

  S* at(int y, int x) { return data.data() + (static_cast<size_t>(y) * w + x) * d; }
  const S* at(int y, int x) const { return data.data() + (static_cast<size_t>(y) * w + x) * d; }

  size_t size() const { return data.size(); }

  bool same_shape(const Grid3T& o) const { return h == o.h && w == o.w && d == o.d; }
};

using Grid3 = Grid3T<float>;

template <typename S>
bool all_finite(const std::vector<S>& v) {
  for (S x : v) {
    if (!std::isfinite(static_cast<double>(x))) return false;
  }
  return true;
}

inline std::string format_shape(int h, int w, int d) {
  return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(d);
}

}  // namespace scaleseg

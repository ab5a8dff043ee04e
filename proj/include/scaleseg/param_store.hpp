#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "scaleseg/common.hpp"

namespace scaleseg {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Flat parameter storage with named views. Keeping values and gradients in
// single contiguous arrays makes the optimizer, serialization and the
// finite-difference check uniform over every tensor.
template <typename S>
class ParamStoreT {
 public:
  struct Entry {
    std::string name;
    size_t offset = 0;
    size_t count = 0;
    std::vector<int> dims;
    bool trainable = true;
    bool decay = false;
  };

  int add(const std::string& name, std::vector<int> dims, bool trainable = true, bool decay = false) {
    size_t count = 1;
    for (int d : dims) count *= static_cast<size_t>(d);
    Entry e{name, values_.size(), count, std::move(dims), trainable, decay};
    values_.resize(values_.size() + count, S(0));
    grads_.resize(values_.size(), S(0));
    entries_.push_back(std::move(e));
    return static_cast<int>(entries_.size()) - 1;
  }

  int find(const std::string& name) const {
    for (size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return static_cast<int>(i);
    throw Error("unknown parameter: " + name);
  }

  const Entry& entry(int id) const { return entries_[static_cast<size_t>(id)]; }
  const std::vector<Entry>& entries() const { return entries_; }
  size_t total() const { return values_.size(); }

  S* values(int id) { return values_.data() + entries_[id].offset; }
  const S* values(int id) const { return values_.data() + entries_[id].offset; }
  S* grads(int id) { return grads_.data() + entries_[id].offset; }
  const S* grads(int id) const { return grads_.data() + entries_[id].offset; }

  Eigen::Map<RowMat<S>> mat(int id) {
    const Entry& e = entries_[id];
    if (e.dims.size() != 2) throw ShapeError("parameter is not 2D: " + e.name);
    return {values(id), e.dims[0], e.dims[1]};
  }
  Eigen::Map<const RowMat<S>> mat(int id) const {
    const Entry& e = entries_[id];
    if (e.dims.size() != 2) throw ShapeError("parameter is not 2D: " + e.name);
    return {values(id), e.dims[0], e.dims[1]};
  }
  Eigen::Map<RowMat<S>> grad_mat(int id) {
    const Entry& e = entries_[id];
    return {grads(id), e.dims[0], e.dims[1]};
  }
  Eigen::Map<ColVec<S>> vec(int id) {
    const Entry& e = entries_[id];
    return {values(id), static_cast<Eigen::Index>(e.count)};
  }
  Eigen::Map<const ColVec<S>> vec(int id) const {
    const Entry& e = entries_[id];
    return {values(id), static_cast<Eigen::Index>(e.count)};
  }
  Eigen::Map<ColVec<S>> grad_vec(int id) {
    const Entry& e = entries_[id];
    return {grads(id), static_cast<Eigen::Index>(e.count)};
  }

  void zero_grads() { std::fill(grads_.begin(), grads_.end(), S(0)); }

  void check_finite(const std::string& what) const {
    if (!all_finite(values_)) throw DivergenceError("non-finite parameters after " + what);
  }

  std::vector<S> values_;
  std::vector<S> grads_;

 private:
  std::vector<Entry> entries_;
};

using ParamStore = ParamStoreT<float>;

// AdamW with decoupled weight decay. Learning-rate scheduling is applied by
// the caller through the `lr` argument.
class AdamW {
 public:
  AdamW(size_t n, double beta1, double beta2, double eps, double weight_decay)
      : m_(n, 0.f), v_(n, 0.f), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

  void step(ParamStore& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (const auto& e : params.entries()) {
      if (!e.trainable) continue;
      float* val = params.values_.data() + e.offset;
      const float* g = params.grads_.data() + e.offset;
      const double decay = e.decay ? wd_ : 0.0;
      for (size_t i = 0; i < e.count; ++i) {
        double gi = g[i];
        double mi = beta1_ * m_[e.offset + i] + (1.0 - beta1_) * gi;
        double vi = beta2_ * v_[e.offset + i] + (1.0 - beta2_) * gi * gi;
        m_[e.offset + i] = static_cast<float>(mi);
        v_[e.offset + i] = static_cast<float>(vi);
        double update = (mi / bc1) / (std::sqrt(vi / bc2) + eps_);
        val[i] = static_cast<float>(val[i] - lr * update - lr * decay * val[i]);
      }
    }
  }

  // Clears first/second moments for a parameter slice (used by codebook
  // entry revival).
  void reset_slice(size_t offset, size_t count) {
    for (size_t i = 0; i < count; ++i) {
      m_[offset + i] = 0.f;
      v_[offset + i] = 0.f;
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  std::vector<float> m_, v_;
  double beta1_, beta2_, eps_, wd_;
  int64_t t_ = 0;
};

// Cosine decay to zero with linear warmup.
inline double lr_at_step(double max_lr, int step, int total_steps, int warmup_steps) {
  if (total_steps <= 0) return max_lr;
  if (warmup_steps > 0 && step < warmup_steps) return max_lr * (step + 1) / static_cast<double>(warmup_steps);
  if (total_steps <= warmup_steps) return max_lr;
  double progress = static_cast<double>(step - warmup_steps) / (total_steps - warmup_steps);
  if (progress > 1.0) progress = 1.0;
  return max_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace scaleseg

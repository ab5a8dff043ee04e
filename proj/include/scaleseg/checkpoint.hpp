#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scaleseg/schedule.hpp"

namespace scaleseg {

// Binary checkpoint container shared by tokenizer and model files.
//
// Layout (all integers little-endian):
//   magic           8 bytes  "SSEGCKP1"
//   version         u32
//   kind            u32      1 = tokenizer, 2 = model
//   header_count    u32      kind-specific scalar fields, in documented order
//   header          u32 x header_count
//   K               u32      schedule length
//   schedule        K x (u32 h, u32 w)
//   tensor_count    u32
//   per tensor:     u32 name_len, name bytes, u32 ndim, ndim x u32 dims,
//                   u64 value_count, value_count x f32 (row-major)
//
// Tokenizer header order: V, D, l, canvas, channels.
// Model header order: vocab_size, d_model, n_layers, n_heads, max_seq_len,
//                     codebook_dim, patch_size, canvas.
// Round-trips are bit-exact: floats are written as their IEEE-754 bits.

inline constexpr char kCheckpointMagic[9] = "SSEGCKP1";
inline constexpr uint32_t kCheckpointVersion = 1;

enum class CkptKind : uint32_t { Tokenizer = 1, Model = 2 };

struct NamedTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<float> data;
};

struct Checkpoint {
  CkptKind kind = CkptKind::Tokenizer;
  std::vector<uint32_t> header;
  Schedule schedule;
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
Checkpoint load_checkpoint(const std::string& path, CkptKind expected);

}  // namespace scaleseg

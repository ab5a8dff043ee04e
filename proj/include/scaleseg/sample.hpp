#pragma once

#include <array>
#include <vector>

#include "scaleseg/image.hpp"
#include "scaleseg/msvq.hpp"
#include "scaleseg/vocab.hpp"

namespace scaleseg {

// Input slot kinds in a supervision/inference sequence. The layout is
//   [image patches] [text] [block 1 .. block K queries] [gen_end]
// where block-1 queries are keyed by the <gen_start> embedding and block-k
// queries (k > 1) are projections of the upsampled previous-scale lookup.
// VisualToken slots only appear in the sequential next-token baseline.
enum class SlotKind : uint8_t { ImagePatch, Text, GenStartQuery, VisualQuery, GenEnd, VisualToken };

struct Slot {
  SlotKind kind = SlotKind::Text;
  int token_id = -1;   // Text / GenEnd / VisualToken
  int scale = 0;       // 1-based, for block slots and VisualToken
  int cell = 0;        // row-major position within the scale
  int patch = -1;      // ImagePatch index
};

struct ScaleBlock {
  int scale = 0;  // 1-based schedule position
  int start = 0;  // first slot index of the block
  int size = 0;   // h_k * w_k
};

inline constexpr int kNoLoss = -1;

struct SequenceSample {
  std::vector<Slot> slots;
  std::vector<int> target_ids;    // kNoLoss where unsupervised
  std::vector<uint8_t> loss_mask;
  std::vector<ScaleBlock> blocks;

  // Teacher-forcing inputs: ground-truth maps during training, predictions
  // so far during inference. Block k reads maps.maps[k-2].
  MultiScaleTokenMaps maps;

  // Patch-mean vectors (one triple of channel means per patch slot).
  std::vector<std::array<float, 3>> patches;

  bool teacher_forced = false;

  int length() const { return static_cast<int>(slots.size()); }
  int prompt_length() const;  // slots before the first block (or gen_end)
  void validate(const UnifiedVocab& vocab) const;
};

// Mean pixel value per channel over patch_size x patch_size tiles, row-major.
std::vector<std::array<float, 3>> patchify(const SceneImage& scene, int patch_size);

// Prompt-only sample: image patches plus encoded instruction. Blocks are
// appended by build_supervision or by the inference loop.
SequenceSample make_prompt(const SceneImage* scene, int patch_size, const std::string& instruction,
                           const UnifiedVocab& vocab);

// Appends the block-k query slots (k = blocks.size() + 1). Targets for the
// new slots default to kNoLoss; training fills them afterwards.
void append_scale_block(SequenceSample& sample, const Schedule& schedule, int scale);

// Appends the force-inserted trailing <gen_end> slot.
void append_gen_end(SequenceSample& sample, const UnifiedVocab& vocab, bool supervised);

// Block-causal allow matrix: strictly causal prefix; block positions see the
// whole prefix, earlier blocks, and their own block bidirectionally.
std::vector<uint8_t> attention_mask(const SequenceSample& sample);

inline bool allowed(const std::vector<uint8_t>& mask, int n, int i, int j) {
  return mask[static_cast<size_t>(i) * n + j] != 0;
}

}  // namespace scaleseg

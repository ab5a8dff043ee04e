#include "scaleseg/sample.hpp"

#include <array>

namespace scaleseg {

int SequenceSample::prompt_length() const {
  int n = 0;
  for (const auto& s : slots) {
    if (s.kind == SlotKind::ImagePatch || s.kind == SlotKind::Text) ++n;
    else break;
  }
  return n;
}

void SequenceSample::validate(const UnifiedVocab& vocab) const {
  const size_t n = slots.size();
  if (target_ids.size() != n || loss_mask.size() != n)
    throw ShapeError("sample arrays must have equal length");
  for (size_t i = 0; i < n; ++i) {
    if ((target_ids[i] == kNoLoss) == (loss_mask[i] != 0))
      throw ShapeError("loss mask inconsistent with targets at position " + std::to_string(i));
  }
  int prev_end = -1;
  for (const auto& b : blocks) {
    if (b.start != prev_end + 1 && prev_end != -1)
      throw ShapeError("scale blocks must be contiguous");
    if (b.size <= 0) throw ShapeError("empty scale block");
    prev_end = b.start + b.size - 1;
    for (int i = b.start; i < b.start + b.size; ++i) {
      const Slot& s = slots[static_cast<size_t>(i)];
      bool is_query = s.kind == SlotKind::GenStartQuery || s.kind == SlotKind::VisualQuery;
      if (!is_query) throw ShapeError("non-query slot inside scale block");
      if (target_ids[static_cast<size_t>(i)] != kNoLoss &&
          !vocab.is_visual(target_ids[static_cast<size_t>(i)]))
        throw ShapeError("scale block target outside visual range");
    }
  }
}

std::vector<std::array<float, 3>> patchify(const SceneImage& scene, int patch_size) {
  if (patch_size <= 0 || scene.h % patch_size != 0 || scene.w % patch_size != 0)
    throw ShapeError("scene size must be divisible by patch size");
  const int ph = scene.h / patch_size, pw = scene.w / patch_size;
  std::vector<std::array<float, 3>> out;
  out.reserve(static_cast<size_t>(ph) * pw);
  const float inv = 1.f / static_cast<float>(patch_size * patch_size);
  for (int py = 0; py < ph; ++py)
    for (int px = 0; px < pw; ++px) {
      std::array<float, 3> mean{0.f, 0.f, 0.f};
      for (int c = 0; c < 3; ++c) {
        float acc = 0.f;
        for (int y = 0; y < patch_size; ++y)
          for (int x = 0; x < patch_size; ++x)
            acc += scene.at(c, py * patch_size + y, px * patch_size + x);
        mean[static_cast<size_t>(c)] = acc * inv;
      }
      out.push_back(mean);
    }
  return out;
}

SequenceSample make_prompt(const SceneImage* scene, int patch_size, const std::string& instruction,
                           const UnifiedVocab& vocab) {
  SequenceSample s;
  if (scene) {
    s.patches = patchify(*scene, patch_size);
    for (size_t i = 0; i < s.patches.size(); ++i) {
      Slot slot;
      slot.kind = SlotKind::ImagePatch;
      slot.patch = static_cast<int>(i);
      s.slots.push_back(slot);
    }
  }
  for (int id : vocab.encode_text(instruction)) {
    Slot slot;
    slot.kind = SlotKind::Text;
    slot.token_id = id;
    s.slots.push_back(slot);
  }
  s.target_ids.assign(s.slots.size(), kNoLoss);
  s.loss_mask.assign(s.slots.size(), 0);
  return s;
}

void append_scale_block(SequenceSample& sample, const Schedule& schedule, int scale) {
  if (scale < 1 || scale > static_cast<int>(schedule.size()))
    throw ShapeError("scale out of schedule range");
  if (static_cast<int>(sample.blocks.size()) != scale - 1)
    throw ShapeError("blocks must be appended in order");
  ScaleBlock b;
  b.scale = scale;
  b.start = sample.length();
  b.size = schedule[static_cast<size_t>(scale - 1)].cells();
  for (int cell = 0; cell < b.size; ++cell) {
    Slot slot;
    slot.kind = scale == 1 ? SlotKind::GenStartQuery : SlotKind::VisualQuery;
    slot.scale = scale;
    slot.cell = cell;
    sample.slots.push_back(slot);
    sample.target_ids.push_back(kNoLoss);
    sample.loss_mask.push_back(0);
  }
  sample.blocks.push_back(b);
}

void append_gen_end(SequenceSample& sample, const UnifiedVocab& vocab, bool supervised) {
  Slot slot;
  slot.kind = SlotKind::GenEnd;
  slot.token_id = vocab.gen_end_id();
  sample.slots.push_back(slot);
  sample.target_ids.push_back(supervised ? vocab.gen_end_id() : kNoLoss);
  sample.loss_mask.push_back(supervised ? 1 : 0);
}

std::vector<uint8_t> attention_mask(const SequenceSample& sample) {
  const int n = sample.length();
  std::vector<uint8_t> mask(static_cast<size_t>(n) * n, 0);

  // block_of[i] = 1-based scale when slot i is a block query, 0 otherwise
  std::vector<int> block_of(static_cast<size_t>(n), 0);
  for (const auto& b : sample.blocks)
    for (int i = b.start; i < b.start + b.size; ++i) block_of[static_cast<size_t>(i)] = b.scale;

  for (int i = 0; i < n; ++i) {
    const int bi = block_of[static_cast<size_t>(i)];
    if (bi == 0) {
      // prefix / trailing slots: strictly causal
      for (int j = 0; j <= i; ++j) mask[static_cast<size_t>(i) * n + j] = 1;
    } else {
      const auto& b = sample.blocks[static_cast<size_t>(bi - 1)];
      // everything before the block, plus the whole block
      for (int j = 0; j < b.start + b.size; ++j) mask[static_cast<size_t>(i) * n + j] = 1;
    }
  }
  return mask;
}

}  // namespace scaleseg

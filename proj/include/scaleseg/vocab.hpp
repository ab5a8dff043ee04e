#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "scaleseg/msvq.hpp"

namespace scaleseg {

// Unified token space: word-level text tokens, then the two control tokens,
// then one visual token per codebook entry. The three ranges are contiguous
// and disjoint, so visual logit masking is a single slice.
class UnifiedVocab {
 public:
  static UnifiedVocab build(std::vector<std::string> text_tokens, int visual_count);
  // Fixed synthetic-domain vocabulary paired with codebook size V.
  static UnifiedVocab build_default(int visual_count);

  int size() const { return visual_base_ + visual_count_; }
  int text_count() const { return static_cast<int>(text_tokens_.size()); }
  int visual_count() const { return visual_count_; }
  int visual_base() const { return visual_base_; }
  int gen_start_id() const { return gen_start_id_; }
  int gen_end_id() const { return gen_end_id_; }
  int pad_id() const { return pad_id_; }
  int unk_id() const { return unk_id_; }

  bool is_visual(int id) const { return id >= visual_base_ && id < visual_base_ + visual_count_; }
  int visual_to_id(int v) const;  // token map index -> vocabulary ID
  int id_to_visual(int id) const; // vocabulary ID -> token map index

  std::vector<int> encode_text(const std::string& s) const;
  std::string decode_text(const std::vector<int>& ids) const;
  const std::string& token_name(int id) const;

  std::vector<int> maps_to_ids(const MultiScaleTokenMaps& maps) const;
  MultiScaleTokenMaps ids_to_maps(const std::vector<int>& ids, const Schedule& schedule) const;

  void save(const std::string& path) const;
  static UnifiedVocab load(const std::string& path);

 private:
  std::vector<std::string> text_tokens_;
  std::unordered_map<std::string, int> text_index_;
  std::vector<std::string> names_;  // full table, for decode/dumps
  int pad_id_ = 0, unk_id_ = 1;
  int gen_start_id_ = 0, gen_end_id_ = 0;
  int visual_base_ = 0, visual_count_ = 0;
};

}  // namespace scaleseg

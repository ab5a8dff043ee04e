#include "scaleseg/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace scaleseg {

UnifiedVocab UnifiedVocab::build(std::vector<std::string> text_tokens, int visual_count) {
  if (visual_count < 1) throw ShapeError("vocab requires at least one visual token");
  UnifiedVocab v;
  v.text_tokens_ = std::move(text_tokens);
  if (v.text_tokens_.size() < 2 || v.text_tokens_[0] != "<pad>" || v.text_tokens_[1] != "<unk>")
    throw Error("text vocabulary must start with <pad>, <unk>");
  for (size_t i = 0; i < v.text_tokens_.size(); ++i) {
    if (!v.text_index_.emplace(v.text_tokens_[i], static_cast<int>(i)).second)
      throw Error("duplicate text token: " + v.text_tokens_[i]);
  }
  v.pad_id_ = 0;
  v.unk_id_ = 1;
  v.gen_start_id_ = static_cast<int>(v.text_tokens_.size());
  v.gen_end_id_ = v.gen_start_id_ + 1;
  v.visual_base_ = v.gen_end_id_ + 1;
  v.visual_count_ = visual_count;

  v.names_ = v.text_tokens_;
  v.names_.push_back("<gen_start>");
  v.names_.push_back("<gen_end>");
  for (int i = 0; i < visual_count; ++i) v.names_.push_back("<visual_token_" + std::to_string(i) + ">");
  return v;
}

UnifiedVocab UnifiedVocab::build_default(int visual_count) {
  // Word-level vocabulary covering the synthetic instruction templates plus
  // some slack for free-form phrasing.
  static const std::vector<std::string> kWords = {
      "<pad>",    "<unk>",   "segment",  "the",      "all",     "every",   "red",
      "green",    "blue",    "small",    "large",    "big",     "tiny",    "circle",
      "square",   "triangle", "circles", "squares",  "triangles", "object", "objects",
      "shape",    "shapes",  "thing",    "things",   "region",  "regions", "area",
      "areas",    "item",    "items",    "target",   "targets", "mask",    "masks",
      "in",       "of",      "on",       "a",        "an",      "and",     "or",
      "please",   "now",     "find",     "show",     "me",      "select",  "pick",
      "highlight", "outline", "fill",    "image",    "scene",   "canvas",  "left",
      "right",    "top",     "bottom",   "center"};
  return build(kWords, visual_count);
}

int UnifiedVocab::visual_to_id(int v) const {
  if (v < 0 || v >= visual_count_) throw ShapeError("visual index out of range: " + std::to_string(v));
  return visual_base_ + v;
}

int UnifiedVocab::id_to_visual(int id) const {
  if (!is_visual(id)) throw ShapeError("not a visual token ID: " + std::to_string(id));
  return id - visual_base_;
}

std::vector<int> UnifiedVocab::encode_text(const std::string& s) const {
  std::vector<int> ids;
  std::istringstream in(s);
  std::string word;
  while (in >> word) {
    std::transform(word.begin(), word.end(), word.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    auto it = text_index_.find(word);
    ids.push_back(it == text_index_.end() ? unk_id_ : it->second);
  }
  return ids;
}

std::string UnifiedVocab::decode_text(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || id >= static_cast<int>(text_tokens_.size()))
      throw ShapeError("not a text token ID: " + std::to_string(id));
    if (!out.empty()) out += ' ';
    out += text_tokens_[static_cast<size_t>(id)];
  }
  return out;
}

const std::string& UnifiedVocab::token_name(int id) const {
  if (id < 0 || id >= static_cast<int>(names_.size()))
    throw ShapeError("token ID out of range: " + std::to_string(id));
  return names_[static_cast<size_t>(id)];
}

std::vector<int> UnifiedVocab::maps_to_ids(const MultiScaleTokenMaps& maps) const {
  maps.validate(visual_count_);
  std::vector<int> ids;
  ids.reserve(static_cast<size_t>(maps.total_tokens()));
  for (const auto& m : maps.maps)
    for (int v : m.indices) ids.push_back(visual_to_id(v));
  return ids;
}

MultiScaleTokenMaps UnifiedVocab::ids_to_maps(const std::vector<int>& ids, const Schedule& schedule) const {
  validate_schedule(schedule);
  if (static_cast<int>(ids.size()) != token_count(schedule))
    throw ShapeError("ID list length " + std::to_string(ids.size()) + " does not match schedule total " +
                     std::to_string(token_count(schedule)));
  MultiScaleTokenMaps maps;
  maps.schedule = schedule;
  size_t pos = 0;
  for (size_t k = 0; k < schedule.size(); ++k) {
    TokenMap m;
    m.scale_index = static_cast<int>(k) + 1;
    m.h = schedule[k].h;
    m.w = schedule[k].w;
    m.indices.reserve(static_cast<size_t>(m.h) * m.w);
    for (int i = 0; i < m.h * m.w; ++i) m.indices.push_back(id_to_visual(ids[pos++]));
    maps.maps.push_back(std::move(m));
  }
  return maps;
}

void UnifiedVocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocab: " + path);
  out << "[text]\n";
  for (const auto& t : text_tokens_) out << t << "\n";
  out << "[control]\n<gen_start>\n<gen_end>\n";
  out << "[visual]\n";
  for (int i = 0; i < visual_count_; ++i) out << "<visual_token_" << i << ">\n";
  if (!out) throw IoError("short write: " + path);
}

UnifiedVocab UnifiedVocab::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab: " + path);
  std::string line, section;
  std::vector<std::string> text;
  int visual = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line;
      continue;
    }
    if (section == "[text]")
      text.push_back(line);
    else if (section == "[visual]")
      ++visual;
    // control tokens are fixed; the section is present for readability
  }
  return build(std::move(text), visual);
}

}  // namespace scaleseg

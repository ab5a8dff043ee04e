#pragma once

#include <functional>
#include <string>
#include <vector>

#include "scaleseg/codebook.hpp"
#include "scaleseg/image.hpp"
#include "scaleseg/msvq.hpp"
#include "scaleseg/param_store.hpp"
#include "scaleseg/schedule.hpp"

namespace scaleseg {

struct TokenizerConfig {
  int downsample = 4;     // spatial factor l (power of two)
  int latent_dim = 8;     // D
  int codebook_size = 64; // V
  int channels = 16;      // conv width
  Schedule schedule = toy_schedule();
  uint64_t seed = 1;

  int stages() const;  // number of stride-2 stages = log2(downsample)
  void validate() const;
};

// The frozen visual tokenizer: conv encoder, codebook, mirrored conv decoder.
// All ops are pure functions of (input, params); training happens once in
// Stage 0, after which the parameters are treated as immutable.
class Tokenizer {
 public:
  static Tokenizer init(const TokenizerConfig& cfg);

  LatentGrid encode(const MaskImage& image) const;
  MaskImage decode(const LatentGrid& latent) const;

  MultiScaleTokenMaps tokenize(const MaskImage& image) const {
    return multi_scale_quantize(encode(image), codebook(), cfg.schedule);
  }
  MaskImage detokenize(const MultiScaleTokenMaps& maps) const {
    return decode(multi_scale_reconstruct(maps, codebook()));
  }
  // encode -> quantize -> reconstruct -> decode
  MaskImage round_trip(const MaskImage& image) const { return detokenize(tokenize(image)); }

  Codebook codebook() const;

  void save(const std::string& path) const;
  static Tokenizer load(const std::string& path);

  // FNV-1a over the raw parameter bytes; used to enforce the frozen-tokenizer
  // contract during sequence-model training.
  uint64_t param_hash() const;

  TokenizerConfig cfg;
  ParamStore params;

 private:
  friend struct TokenizerTrainer;
  Tokenizer() = default;

  struct LayerIds {
    std::vector<int> enc_w, enc_b, dec_w, dec_b;
    int codebook = -1;
  };
  LayerIds ids_;

  void register_params();
};

struct TokenizerTrainConfig {
  int steps = 4000;
  int batch_size = 32;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.99, eps = 1e-8;
  double commitment_weight = 0.25;
  int warmup_autoencoder_steps = 500;  // plain reconstruction before VQ kicks in
  int revival_interval = 250;          // dead codebook entries re-seeded this often
  int log_every = 200;
  uint64_t seed = 1;
  int threads = 2;
};

struct TokenizerTrainResult {
  Tokenizer tokenizer;
  std::vector<std::string> log_lines;  // JSON records: step, lr, loss
};

TokenizerTrainResult train_tokenizer(const std::vector<MaskImage>& dataset, const TokenizerConfig& cfg,
                                     const TokenizerTrainConfig& tc,
                                     const std::function<void(const std::string&)>& log_sink = {});

}  // namespace scaleseg

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "scaleseg/checkpoint.hpp"
#include "scaleseg/codebook.hpp"
#include "scaleseg/param_store.hpp"
#include "scaleseg/resize.hpp"
#include "scaleseg/sample.hpp"
#include "scaleseg/schedule.hpp"

namespace scaleseg {

struct ModelConfig {
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int max_seq_len = 256;
  int vocab_size = 0;
  int gen_start_id = -1;  // <gen_start> ID in the unified vocabulary
  int codebook_dim = 8;   // D of the frozen tokenizer
  int patch_size = 8;     // patchifier tile size
  int canvas = 32;
  Schedule schedule = toy_schedule();
  uint64_t seed = 1;

  void validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
      throw ShapeError("d_model must be a positive multiple of n_heads");
    if (n_layers <= 0) throw ShapeError("n_layers must be positive");
    if (vocab_size <= 0) throw ShapeError("vocab_size must be set");
    if (gen_start_id < 0 || gen_start_id >= vocab_size)
      throw ShapeError("gen_start_id outside vocabulary");
    validate_schedule(schedule);
    if (max_seq_len < token_count(schedule) + 2)
      throw ShapeError("max_seq_len too small for the schedule");
  }
};

// Decoder-only transformer with a unified classification head, a generation
// projector for visual queries, and block-causal attention over scale blocks.
// Pre-LN blocks, GELU MLPs, learned positions. Templated on the scalar type:
// float for training/inference, double for the finite-difference oracle.
template <typename S>
class TransformerT {
 public:
  using Mat = RowMat<S>;

  ModelConfig cfg;
  ParamStoreT<S> params;

  explicit TransformerT(const ModelConfig& config) : cfg(config) {
    cfg.validate();
    register_params();
    init_params();
  }

  // --- embedding -----------------------------------------------------------

  // Upsampled previous-scale lookups feeding each block's queries.
  // grids[k-1] is the (h_k x w_k x D) input grid for block k; grids[0] is
  // unused (block 1 is keyed by <gen_start>).
  std::vector<Grid3> query_grids(const SequenceSample& sample, const Codebook& codebook) const {
    std::vector<Grid3> grids(sample.blocks.size());
    for (size_t b = 1; b < sample.blocks.size(); ++b) {
      const auto& blk = sample.blocks[b];
      const TokenMap& prev = sample.maps.maps.at(b - 1);
      Grid3 looked = lookup_grid(codebook, prev.indices, prev.h, prev.w);
      grids[b] = bilinear_resize(looked, cfg.schedule[blk.scale - 1].h, cfg.schedule[blk.scale - 1].w);
    }
    return grids;
  }

  Mat embed_slots(const SequenceSample& sample, const Codebook& codebook) const {
    return embed_slots(sample, query_grids(sample, codebook));
  }

  Mat embed_slots(const SequenceSample& sample, const std::vector<Grid3>& grids) const {
    const int n = sample.length();
    const int d = cfg.d_model;
    if (n > cfg.max_seq_len) throw ShapeError("sequence length exceeds max_seq_len");
    Mat x(n, d);
    auto tok = params.mat(ids_.tok_emb);
    auto pos = params.mat(ids_.pos_emb);
    auto spe = params.mat(ids_.scale_pos_emb);
    auto pw = params.mat(ids_.patch_w);
    auto pb = params.vec(ids_.patch_b);
    auto prw = params.mat(ids_.proj_w);
    auto prb = params.vec(ids_.proj_b);

    for (int i = 0; i < n; ++i) {
      const Slot& slot = sample.slots[static_cast<size_t>(i)];
      switch (slot.kind) {
        case SlotKind::ImagePatch: {
          const auto& p = sample.patches.at(static_cast<size_t>(slot.patch));
          x.row(i) = pb.transpose();
          for (int c = 0; c < 3; ++c) x.row(i) += static_cast<S>(p[static_cast<size_t>(c)]) * pw.row(c);
          x.row(i) += pos.row(i);
          break;
        }
        case SlotKind::Text:
        case SlotKind::GenEnd:
          x.row(i) = tok.row(slot.token_id) + pos.row(i);
          break;
        case SlotKind::GenStartQuery:
          x.row(i) = tok.row(gen_start_id()) + spe.row(scale_offset(slot.scale) + slot.cell);
          break;
        case SlotKind::VisualQuery: {
          const Grid3& g = grids.at(static_cast<size_t>(slot.scale - 1));
          const float* u = g.data.data() + static_cast<size_t>(slot.cell) * g.d;
          x.row(i) = prb.transpose();
          for (int c = 0; c < g.d; ++c) x.row(i) += static_cast<S>(u[c]) * prw.row(c);
          x.row(i) += spe.row(scale_offset(slot.scale) + slot.cell);
          break;
        }
        case SlotKind::VisualToken: {
          // sequential baseline: previously emitted final-scale token
          const float* u = codebook.row(slot.token_id);
          x.row(i) = prb.transpose();
          for (int c = 0; c < codebook.D; ++c) x.row(i) += static_cast<S>(u[c]) * prw.row(c);
          x.row(i) += spe.row(scale_offset(slot.scale) + slot.cell);
          break;
        }
      }
    }
    return x;
  }

  // --- forward --------------------------------------------------------------

  struct LayerCache {
    Mat ln1_hat, q, k, v, ctx, res1, ln2_hat, h1, res2;
    ColVec<S> rstd1, rstd2;
    std::vector<Mat> probs;  // one n x n matrix per head
  };
  struct Cache {
    Mat x0;
    std::vector<LayerCache> layers;
    Mat lnf_hat;
    ColVec<S> rstdf;
    Mat logits;
    std::vector<uint8_t> mask;
  };

  Mat forward(const SequenceSample& sample, const Codebook& codebook) const {
    Cache cache;
    forward_cached(sample, query_grids(sample, codebook), cache);
    return cache.logits;
  }

  void forward_cached(const SequenceSample& sample, const std::vector<Grid3>& grids, Cache& cache) const {
    const int n = sample.length();
    const int d = cfg.d_model;
    const int dh = d / cfg.n_heads;
    const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    cache.mask = attention_mask(sample);
    cache.x0 = embed_slots(sample, grids);
    cache.layers.assign(static_cast<size_t>(cfg.n_layers), {});

    Mat x = cache.x0;
    for (int l = 0; l < cfg.n_layers; ++l) {
      LayerCache& lc = cache.layers[static_cast<size_t>(l)];
      const auto& ly = ids_.layers[static_cast<size_t>(l)];

      layernorm(x, params.vec(ly.ln1_g), params.vec(ly.ln1_b), lc.ln1_hat, lc.rstd1);
      Mat ln1_out = apply_gamma_beta(lc.ln1_hat, params.vec(ly.ln1_g), params.vec(ly.ln1_b));
      lc.q = ln1_out * params.mat(ly.wq);
      lc.q.rowwise() += params.vec(ly.bq).transpose();
      lc.k = ln1_out * params.mat(ly.wk);
      lc.k.rowwise() += params.vec(ly.bk).transpose();
      lc.v = ln1_out * params.mat(ly.wv);
      lc.v.rowwise() += params.vec(ly.bv).transpose();

      lc.ctx.resize(n, d);
      lc.probs.assign(static_cast<size_t>(cfg.n_heads), Mat());
      for (int h = 0; h < cfg.n_heads; ++h) {
        auto qh = lc.q.middleCols(h * dh, dh);
        auto kh = lc.k.middleCols(h * dh, dh);
        auto vh = lc.v.middleCols(h * dh, dh);
        Mat scores = qh * kh.transpose() * inv_sqrt_dh;
        Mat& probs = lc.probs[static_cast<size_t>(h)];
        probs.resize(n, n);
        masked_softmax(scores, cache.mask, n, probs);
        lc.ctx.middleCols(h * dh, dh) = probs * vh;
      }
      Mat attn_out = lc.ctx * params.mat(ly.wo);
      attn_out.rowwise() += params.vec(ly.bo).transpose();
      lc.res1 = x + attn_out;

      layernorm(lc.res1, params.vec(ly.ln2_g), params.vec(ly.ln2_b), lc.ln2_hat, lc.rstd2);
      Mat ln2_out = apply_gamma_beta(lc.ln2_hat, params.vec(ly.ln2_g), params.vec(ly.ln2_b));
      lc.h1 = ln2_out * params.mat(ly.w1);
      lc.h1.rowwise() += params.vec(ly.b1).transpose();
      Mat act = gelu(lc.h1);
      Mat mlp_out = act * params.mat(ly.w2);
      mlp_out.rowwise() += params.vec(ly.b2).transpose();
      lc.res2 = lc.res1 + mlp_out;
      x = lc.res2;
    }

    layernorm(x, params.vec(ids_.lnf_g), params.vec(ids_.lnf_b), cache.lnf_hat, cache.rstdf);
    Mat lnf_out = apply_gamma_beta(cache.lnf_hat, params.vec(ids_.lnf_g), params.vec(ids_.lnf_b));
    cache.logits = lnf_out * params.mat(ids_.head_w);
    cache.logits.rowwise() += params.vec(ids_.head_b).transpose();
    if (!cache.logits.allFinite()) throw DivergenceError("non-finite logits in forward pass");
  }

  // Mean cross-entropy over supervised positions of one sample.
  S sample_loss(const Mat& logits, const SequenceSample& sample) const {
    int supervised = 0;
    double total = 0.0;
    for (int i = 0; i < sample.length(); ++i) {
      int target = sample.target_ids[static_cast<size_t>(i)];
      if (target == kNoLoss) continue;
      total += row_cross_entropy(logits, i, target);
      ++supervised;
    }
    if (supervised == 0) throw ShapeError("sample has no supervised positions");
    return static_cast<S>(total / supervised);
  }

  // Forward + reverse pass for one sample. Gradients are scaled by
  // loss_scale and accumulated into grad (a flat buffer matching params).
  S forward_backward(const SequenceSample& sample, const std::vector<Grid3>& grids, S loss_scale,
                     std::vector<S>& grad) const {
    Cache cache;
    forward_cached(sample, grids, cache);
    const int n = sample.length();
    const int d = cfg.d_model;
    const int dh = d / cfg.n_heads;
    const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    // Loss and dL/dlogits.
    int supervised = 0;
    for (int t : sample.target_ids) supervised += (t != kNoLoss) ? 1 : 0;
    if (supervised == 0) throw ShapeError("sample has no supervised positions");
    const S row_scale = loss_scale / static_cast<S>(supervised);

    double loss_acc = 0.0;
    Mat g_logits = Mat::Zero(n, cfg.vocab_size);
    for (int i = 0; i < n; ++i) {
      int target = sample.target_ids[static_cast<size_t>(i)];
      if (target == kNoLoss) continue;
      loss_acc += row_cross_entropy(logits_row_softmax(cache.logits, i, g_logits), i, target, &g_logits,
                                    row_scale);
    }
    S loss = static_cast<S>(loss_acc / supervised);

    // Head and final LN.
    Mat lnf_out = apply_gamma_beta(cache.lnf_hat, params.vec(ids_.lnf_g), params.vec(ids_.lnf_b));
    grad_mat(grad, ids_.head_w) += lnf_out.transpose() * g_logits;
    grad_vec(grad, ids_.head_b) += g_logits.colwise().sum().transpose();
    Mat g_lnf_out = g_logits * params.mat(ids_.head_w).transpose();
    Mat g_x = layernorm_backward(g_lnf_out, cache.lnf_hat, cache.rstdf, params.vec(ids_.lnf_g),
                                 grad_vec(grad, ids_.lnf_g), grad_vec(grad, ids_.lnf_b));

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
      const LayerCache& lc = cache.layers[static_cast<size_t>(l)];
      const auto& ly = ids_.layers[static_cast<size_t>(l)];

      // MLP branch
      Mat ln2_out = apply_gamma_beta(lc.ln2_hat, params.vec(ly.ln2_g), params.vec(ly.ln2_b));
      Mat act = gelu(lc.h1);
      Mat g_mlp_out = g_x;  // residual: res2 = res1 + mlp_out
      grad_mat(grad, ly.w2) += act.transpose() * g_mlp_out;
      grad_vec(grad, ly.b2) += g_mlp_out.colwise().sum().transpose();
      Mat g_act = g_mlp_out * params.mat(ly.w2).transpose();
      Mat g_h1 = gelu_backward(lc.h1, g_act);
      grad_mat(grad, ly.w1) += ln2_out.transpose() * g_h1;
      grad_vec(grad, ly.b1) += g_h1.colwise().sum().transpose();
      Mat g_ln2_out = g_h1 * params.mat(ly.w1).transpose();
      Mat g_res1 = g_x + layernorm_backward(g_ln2_out, lc.ln2_hat, lc.rstd2, params.vec(ly.ln2_g),
                                            grad_vec(grad, ly.ln2_g), grad_vec(grad, ly.ln2_b));

      // Attention branch
      Mat ln1_out = apply_gamma_beta(lc.ln1_hat, params.vec(ly.ln1_g), params.vec(ly.ln1_b));
      Mat g_attn_out = g_res1;  // residual: res1 = x + attn_out
      grad_mat(grad, ly.wo) += lc.ctx.transpose() * g_attn_out;
      grad_vec(grad, ly.bo) += g_attn_out.colwise().sum().transpose();
      Mat g_ctx = g_attn_out * params.mat(ly.wo).transpose();

      Mat g_q = Mat::Zero(n, d), g_k = Mat::Zero(n, d), g_v = Mat::Zero(n, d);
      for (int h = 0; h < cfg.n_heads; ++h) {
        const Mat& probs = lc.probs[static_cast<size_t>(h)];
        auto qh = lc.q.middleCols(h * dh, dh);
        auto kh = lc.k.middleCols(h * dh, dh);
        auto vh = lc.v.middleCols(h * dh, dh);
        auto g_ctx_h = g_ctx.middleCols(h * dh, dh);
        Mat g_probs = g_ctx_h * vh.transpose();
        g_v.middleCols(h * dh, dh) = probs.transpose() * g_ctx_h;
        // softmax backward (masked entries have probs == 0)
        ColVec<S> dot = (g_probs.array() * probs.array()).rowwise().sum();
        Mat g_scores = probs.array() * (g_probs.colwise() - dot).array();
        g_q.middleCols(h * dh, dh) = g_scores * kh * inv_sqrt_dh;
        g_k.middleCols(h * dh, dh) = g_scores.transpose() * qh * inv_sqrt_dh;
      }

      grad_mat(grad, ly.wq) += ln1_out.transpose() * g_q;
      grad_vec(grad, ly.bq) += g_q.colwise().sum().transpose();
      grad_mat(grad, ly.wk) += ln1_out.transpose() * g_k;
      grad_vec(grad, ly.bk) += g_k.colwise().sum().transpose();
      grad_mat(grad, ly.wv) += ln1_out.transpose() * g_v;
      grad_vec(grad, ly.bv) += g_v.colwise().sum().transpose();
      Mat g_ln1_out = g_q * params.mat(ly.wq).transpose() + g_k * params.mat(ly.wk).transpose() +
                      g_v * params.mat(ly.wv).transpose();
      g_x = g_res1 + layernorm_backward(g_ln1_out, lc.ln1_hat, lc.rstd1, params.vec(ly.ln1_g),
                                        grad_vec(grad, ly.ln1_g), grad_vec(grad, ly.ln1_b));
    }

    embed_backward(sample, grids, g_x, grad);
    return loss;
  }

  // --- parameter bookkeeping -------------------------------------------------

  int gen_start_id() const { return gen_start_id_; }
  void set_gen_start_id(int id) { gen_start_id_ = id; }

  int scale_offset(int scale) const { return scale_offsets_[static_cast<size_t>(scale - 1)]; }

  size_t trainable_count() const {
    size_t n = 0;
    for (const auto& e : params.entries())
      if (e.trainable) n += e.count;
    return n;
  }

  void save(const std::string& path) const {
    Checkpoint ckpt;
    ckpt.kind = CkptKind::Model;
    ckpt.header = {static_cast<uint32_t>(cfg.vocab_size),   static_cast<uint32_t>(cfg.d_model),
                   static_cast<uint32_t>(cfg.n_layers),     static_cast<uint32_t>(cfg.n_heads),
                   static_cast<uint32_t>(cfg.max_seq_len),  static_cast<uint32_t>(cfg.codebook_dim),
                   static_cast<uint32_t>(cfg.patch_size),   static_cast<uint32_t>(cfg.canvas)};
    ckpt.schedule = cfg.schedule;
    for (const auto& e : params.entries()) {
      NamedTensor t;
      t.name = e.name;
      t.dims = e.dims;
      t.data.resize(e.count);
      const S* v = params.values_.data() + e.offset;
      for (size_t i = 0; i < e.count; ++i) t.data[i] = static_cast<float>(v[i]);
      ckpt.tensors.push_back(std::move(t));
    }
    save_checkpoint(path, ckpt);
  }

  static TransformerT load(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path, CkptKind::Model);
    if (ckpt.header.size() != 8) throw IoError("model checkpoint header malformed: " + path);
    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(ckpt.header[0]);
    cfg.d_model = static_cast<int>(ckpt.header[1]);
    cfg.n_layers = static_cast<int>(ckpt.header[2]);
    cfg.n_heads = static_cast<int>(ckpt.header[3]);
    cfg.max_seq_len = static_cast<int>(ckpt.header[4]);
    cfg.codebook_dim = static_cast<int>(ckpt.header[5]);
    cfg.patch_size = static_cast<int>(ckpt.header[6]);
    cfg.canvas = static_cast<int>(ckpt.header[7]);
    cfg.schedule = ckpt.schedule;
    TransformerT model(cfg);
    for (const auto& e : model.params.entries()) {
      const NamedTensor& nt = ckpt.tensor(e.name);
      if (nt.data.size() != e.count) throw IoError("tensor shape mismatch in " + path + ": " + e.name);
      S* v = model.params.values_.data() + e.offset;
      for (size_t i = 0; i < e.count; ++i) v[i] = static_cast<S>(nt.data[i]);
    }
    return model;
  }

  struct LayerIds {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    int ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct Ids {
    int tok_emb, pos_emb, scale_pos_emb, patch_w, patch_b, proj_w, proj_b;
    std::vector<LayerIds> layers;
    int lnf_g, lnf_b, head_w, head_b;
  };
  const Ids& ids() const { return ids_; }

 private:
  Ids ids_;
  std::vector<int> scale_offsets_;
  int gen_start_id_ = -1;
  static constexpr double kLnEps = 1e-5;

  void register_params() {
    const int d = cfg.d_model;
    int total_cells = token_count(cfg.schedule);
    scale_offsets_.clear();
    int off = 0;
    for (const auto& s : cfg.schedule) {
      scale_offsets_.push_back(off);
      off += s.cells();
    }

    ids_.tok_emb = params.add("tok_emb", {cfg.vocab_size, d});
    ids_.pos_emb = params.add("pos_emb", {cfg.max_seq_len, d});
    ids_.scale_pos_emb = params.add("scale_pos_emb", {total_cells, d});
    ids_.patch_w = params.add("patchifier.w", {3, d}, /*trainable=*/false);
    ids_.patch_b = params.add("patchifier.b", {d}, /*trainable=*/false);
    ids_.proj_w = params.add("gen_projector.w", {cfg.codebook_dim, d}, true, true);
    ids_.proj_b = params.add("gen_projector.b", {d});
    for (int l = 0; l < cfg.n_layers; ++l) {
      std::string p = "layer" + std::to_string(l) + ".";
      LayerIds ly;
      ly.ln1_g = params.add(p + "ln1.g", {d});
      ly.ln1_b = params.add(p + "ln1.b", {d});
      ly.wq = params.add(p + "attn.wq", {d, d}, true, true);
      ly.bq = params.add(p + "attn.bq", {d});
      ly.wk = params.add(p + "attn.wk", {d, d}, true, true);
      ly.bk = params.add(p + "attn.bk", {d});
      ly.wv = params.add(p + "attn.wv", {d, d}, true, true);
      ly.bv = params.add(p + "attn.bv", {d});
      ly.wo = params.add(p + "attn.wo", {d, d}, true, true);
      ly.bo = params.add(p + "attn.bo", {d});
      ly.ln2_g = params.add(p + "ln2.g", {d});
      ly.ln2_b = params.add(p + "ln2.b", {d});
      ly.w1 = params.add(p + "mlp.w1", {d, 4 * d}, true, true);
      ly.b1 = params.add(p + "mlp.b1", {4 * d});
      ly.w2 = params.add(p + "mlp.w2", {4 * d, d}, true, true);
      ly.b2 = params.add(p + "mlp.b2", {d});
      ids_.layers.push_back(ly);
    }
    ids_.lnf_g = params.add("ln_f.g", {d});
    ids_.lnf_b = params.add("ln_f.b", {d});
    ids_.head_w = params.add("head.w", {d, cfg.vocab_size}, true, true);
    ids_.head_b = params.add("head.b", {cfg.vocab_size});
  }

  void init_params() {
    Rng rng(cfg.seed);
    for (const auto& e : params.entries()) {
      S* v = params.values_.data() + e.offset;
      bool is_gamma = e.name.ends_with("ln1.g") || e.name.ends_with("ln2.g") || e.name.ends_with("ln_f.g") ||
                      e.name == "ln_f.g";
      bool is_bias = e.name.ends_with(".b") || e.name.ends_with(".bq") || e.name.ends_with(".bk") ||
                     e.name.ends_with(".bv") || e.name.ends_with(".bo") || e.name.ends_with(".b1") ||
                     e.name.ends_with(".b2");
      if (is_gamma) {
        for (size_t i = 0; i < e.count; ++i) v[i] = S(1);
      } else if (is_bias) {
        for (size_t i = 0; i < e.count; ++i) v[i] = S(0);
      } else {
        for (size_t i = 0; i < e.count; ++i) v[i] = static_cast<S>(rng.normal() * 0.02);
      }
    }
  }

  // --- math helpers -----------------------------------------------------------

  Eigen::Map<RowMat<S>> grad_mat(std::vector<S>& grad, int id) const {
    const auto& e = params.entry(id);
    return {grad.data() + e.offset, e.dims[0], e.dims[1]};
  }
  Eigen::Map<ColVec<S>> grad_vec(std::vector<S>& grad, int id) const {
    const auto& e = params.entry(id);
    return {grad.data() + e.offset, static_cast<Eigen::Index>(e.count)};
  }

  static void layernorm(const Mat& x, Eigen::Map<const ColVec<S>> /*g*/, Eigen::Map<const ColVec<S>> /*b*/,
                        Mat& hat, ColVec<S>& rstd) {
    const int n = static_cast<int>(x.rows());
    const int d = static_cast<int>(x.cols());
    hat.resize(n, d);
    rstd.resize(n);
    for (int i = 0; i < n; ++i) {
      S mean = x.row(i).mean();
      S var = (x.row(i).array() - mean).square().sum() / static_cast<S>(d);
      S r = S(1) / std::sqrt(var + static_cast<S>(kLnEps));
      hat.row(i) = (x.row(i).array() - mean) * r;
      rstd(i) = r;
    }
  }

  static Mat apply_gamma_beta(const Mat& hat, Eigen::Map<const ColVec<S>> g,
                              Eigen::Map<const ColVec<S>> b) {
    Mat out = hat.array().rowwise() * g.transpose().array();
    out.rowwise() += b.transpose();
    return out;
  }

  // dL/dx for y = gamma * hat + beta; accumulates gamma/beta grads.
  static Mat layernorm_backward(const Mat& g_out, const Mat& hat, const ColVec<S>& rstd,
                                Eigen::Map<const ColVec<S>> gamma, Eigen::Map<ColVec<S>> g_gamma,
                                Eigen::Map<ColVec<S>> g_beta) {
    const int n = static_cast<int>(g_out.rows());
    const int d = static_cast<int>(g_out.cols());
    g_gamma += (g_out.array() * hat.array()).colwise().sum().transpose().matrix();
    g_beta += g_out.colwise().sum().transpose();
    Mat g_hat = g_out.array().rowwise() * gamma.transpose().array();
    Mat g_x(n, d);
    for (int i = 0; i < n; ++i) {
      S mean_g = g_hat.row(i).mean();
      S dot = (g_hat.row(i).array() * hat.row(i).array()).sum() / static_cast<S>(d);
      g_x.row(i) = ((g_hat.row(i).array() - mean_g) - hat.row(i).array() * dot) * rstd(i);
    }
    return g_x;
  }

  static void masked_softmax(const Mat& scores, const std::vector<uint8_t>& mask, int n, Mat& probs) {
    for (int i = 0; i < n; ++i) {
      const uint8_t* allow = mask.data() + static_cast<size_t>(i) * n;
      S max_v = std::numeric_limits<S>::lowest();
      for (int j = 0; j < n; ++j)
        if (allow[j] && scores(i, j) > max_v) max_v = scores(i, j);
      S sum = S(0);
      for (int j = 0; j < n; ++j) {
        S e = allow[j] ? std::exp(scores(i, j) - max_v) : S(0);
        probs(i, j) = e;
        sum += e;
      }
      S inv = S(1) / sum;
      for (int j = 0; j < n; ++j) probs(i, j) *= inv;
    }
  }

  static Mat gelu(const Mat& x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return x.unaryExpr([](S v) {
      double t = std::tanh(c * (static_cast<double>(v) + 0.044715 * std::pow(static_cast<double>(v), 3)));
      return static_cast<S>(0.5 * static_cast<double>(v) * (1.0 + t));
    });
  }

  static Mat gelu_backward(const Mat& x, const Mat& g) {
    constexpr double c = 0.7978845608028654;
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      double v = static_cast<double>(x(i));
      double inner = c * (v + 0.044715 * v * v * v);
      double t = std::tanh(inner);
      double dinner = c * (1.0 + 3.0 * 0.044715 * v * v);
      double dydx = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner;
      out(i) = static_cast<S>(static_cast<double>(g(i)) * dydx);
    }
    return out;
  }

  // Cross-entropy of one logit row, optionally accumulating the gradient
  // (softmax - onehot) * scale into g_logits.
  double row_cross_entropy(const Mat& logits, int i, int target, Mat* g_logits = nullptr,
                           S scale = S(1)) const {
    const int w = cfg.vocab_size;
    double max_v = static_cast<double>(logits.row(i).maxCoeff());
    double sum = 0.0;
    for (int j = 0; j < w; ++j) sum += std::exp(static_cast<double>(logits(i, j)) - max_v);
    double lse = max_v + std::log(sum);
    double loss = lse - static_cast<double>(logits(i, target));
    if (g_logits) {
      for (int j = 0; j < w; ++j) {
        double p = std::exp(static_cast<double>(logits(i, j)) - lse);
        (*g_logits)(i, j) += static_cast<S>((p - (j == target ? 1.0 : 0.0)) * static_cast<double>(scale));
      }
    }
    return loss;
  }

  // Helper used only to keep the loss loop readable.
  const Mat& logits_row_softmax(const Mat& logits, int, Mat&) const { return logits; }

  void embed_backward(const SequenceSample& sample, const std::vector<Grid3>& grids, const Mat& g_x,
                      std::vector<S>& grad) const {
    const int n = sample.length();
    auto g_tok = grad_mat(grad, ids_.tok_emb);
    auto g_pos = grad_mat(grad, ids_.pos_emb);
    auto g_spe = grad_mat(grad, ids_.scale_pos_emb);
    auto g_prw = grad_mat(grad, ids_.proj_w);
    auto g_prb = grad_vec(grad, ids_.proj_b);
    const Codebook* cb = nullptr;  // VisualToken slots are inference-only; no grads needed

    for (int i = 0; i < n; ++i) {
      const Slot& slot = sample.slots[static_cast<size_t>(i)];
      switch (slot.kind) {
        case SlotKind::ImagePatch:
          g_pos.row(i) += g_x.row(i);  // patchifier is frozen
          break;
        case SlotKind::Text:
        case SlotKind::GenEnd:
          g_tok.row(slot.token_id) += g_x.row(i);
          g_pos.row(i) += g_x.row(i);
          break;
        case SlotKind::GenStartQuery:
          g_tok.row(gen_start_id()) += g_x.row(i);
          g_spe.row(scale_offset(slot.scale) + slot.cell) += g_x.row(i);
          break;
        case SlotKind::VisualQuery: {
          const Grid3& g = grids.at(static_cast<size_t>(slot.scale - 1));
          const float* u = g.data.data() + static_cast<size_t>(slot.cell) * g.d;
          for (int c = 0; c < g.d; ++c) g_prw.row(c) += static_cast<S>(u[c]) * g_x.row(i);
          g_prb += g_x.row(i).transpose();
          g_spe.row(scale_offset(slot.scale) + slot.cell) += g_x.row(i);
          break;
        }
        case SlotKind::VisualToken:
          (void)cb;
          throw ShapeError("VisualToken slots are not trainable");
      }
    }
  }
};

using Transformer = TransformerT<float>;

}  // namespace scaleseg

#include "scaleseg/tokenizer.hpp"

#include <cmath>
#include <cstring>
#include <thread>

#include "scaleseg/checkpoint.hpp"
#include "scaleseg/conv.hpp"
#include "scaleseg/resize.hpp"

namespace scaleseg {

int TokenizerConfig::stages() const {
  int l = downsample, n = 0;
  while (l > 1) {
    if (l % 2 != 0) throw ShapeError("downsample factor must be a power of two");
    l /= 2;
    ++n;
  }
  return n;
}

void TokenizerConfig::validate() const {
  if (downsample < 2) throw ShapeError("downsample factor must be >= 2");
  stages();
  if (latent_dim < 1) throw ShapeError("latent_dim must be positive");
  if (codebook_size < 2) throw ShapeError("codebook_size must be >= 2");
  if (channels < 1) throw ShapeError("channels must be positive");
  validate_schedule(schedule);
}

namespace {

ConvSpec enc_spec(const TokenizerConfig& cfg, int i) {
  const int n = cfg.stages();
  if (i < n) return {i == 0 ? 1 : cfg.channels, cfg.channels, 3, 2, 1};
  return {cfg.channels, cfg.latent_dim, 3, 1, 1};  // linear head
}

ConvSpec dec_spec(const TokenizerConfig& cfg, int i) {
  const int n = cfg.stages();
  if (i == 0) return {cfg.latent_dim, cfg.channels, 3, 1, 1};
  if (i <= n) return {cfg.channels, cfg.channels, 3, 1, 1};  // applied after 2x upsample
  return {cfg.channels, 1, 3, 1, 1};                         // sigmoid output
}

Grid3 chw_to_hwc(const std::vector<float>& chw, int c, int h, int w) {
  Grid3 g(h, w, c);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) g.at(y, x)[ch] = chw[(static_cast<size_t>(ch) * h + y) * w + x];
  return g;
}

std::vector<float> hwc_to_chw(const Grid3& g) {
  std::vector<float> chw(g.size());
  for (int ch = 0; ch < g.d; ++ch)
    for (int y = 0; y < g.h; ++y)
      for (int x = 0; x < g.w; ++x) chw[(static_cast<size_t>(ch) * g.h + y) * g.w + x] = g.at(y, x)[ch];
  return chw;
}

// Cached activations for one sample, reused by the backward pass.
struct TokenizerActivations {
  std::vector<std::vector<float>> enc_act;  // enc_act[0] = input; post-ReLU afterwards
  std::vector<float> latent_chw;
  std::vector<std::vector<float>> dec_up;   // pre-conv upsampled inputs
  std::vector<std::vector<float>> dec_act;  // post-ReLU activations
  std::vector<float> recon;                 // post-sigmoid
};

}  // namespace

void Tokenizer::register_params() {
  const int n = cfg.stages();
  ids_.enc_w.clear();
  ids_.enc_b.clear();
  ids_.dec_w.clear();
  ids_.dec_b.clear();
  for (int i = 0; i <= n; ++i) {
    ConvSpec s = enc_spec(cfg, i);
    ids_.enc_w.push_back(params.add("enc" + std::to_string(i) + ".w", {s.out_c, s.in_c * s.k * s.k}));
    ids_.enc_b.push_back(params.add("enc" + std::to_string(i) + ".b", {s.out_c}));
  }
  for (int i = 0; i <= n + 1; ++i) {
    ConvSpec s = dec_spec(cfg, i);
    ids_.dec_w.push_back(params.add("dec" + std::to_string(i) + ".w", {s.out_c, s.in_c * s.k * s.k}));
    ids_.dec_b.push_back(params.add("dec" + std::to_string(i) + ".b", {s.out_c}));
  }
  ids_.codebook = params.add("codebook", {cfg.codebook_size, cfg.latent_dim});
}

Tokenizer Tokenizer::init(const TokenizerConfig& cfg) {
  cfg.validate();
  Tokenizer t;
  t.cfg = cfg;
  t.register_params();
  Rng rng(cfg.seed);
  for (const auto& e : t.params.entries()) {
    const bool is_weight = e.name.ends_with(".w");
    float* v = t.params.values_.data() + e.offset;
    if (is_weight) {
      // fan-in scaled init
      double fan_in = e.dims.size() == 2 ? e.dims[1] : e.count;
      double scale = std::sqrt(2.0 / fan_in);
      for (size_t i = 0; i < e.count; ++i) v[i] = static_cast<float>(rng.normal() * scale);
    } else if (e.name == "codebook") {
      for (size_t i = 0; i < e.count; ++i) v[i] = static_cast<float>(rng.normal() * 0.05);
    }
    // biases stay zero
  }
  return t;
}

Codebook Tokenizer::codebook() const {
  Codebook cb(cfg.codebook_size, cfg.latent_dim);
  const float* v = params.values(ids_.codebook);
  std::copy(v, v + cb.vectors.size(), cb.vectors.begin());
  return cb;
}

namespace {

void encoder_forward(const Tokenizer& t, const ParamStore& p, const std::vector<int>& wids,
                     const std::vector<int>& bids, const MaskImage& image, TokenizerActivations& act) {
  const auto& cfg = t.cfg;
  const int n = cfg.stages();
  act.enc_act.assign(n + 2, {});
  act.enc_act[0] = image.pixels;  // 1 x H x W
  int h = image.h, w = image.w;
  for (int i = 0; i <= n; ++i) {
    ConvSpec s = enc_spec(cfg, i);
    int oh = s.out_extent(h), ow = s.out_extent(w);
    act.enc_act[i + 1].assign(static_cast<size_t>(s.out_c) * oh * ow, 0.f);
    conv2d_forward(s, p.values(wids[i]), p.values(bids[i]), act.enc_act[i].data(), h, w,
                   act.enc_act[i + 1].data());
    if (i < n) relu_forward(act.enc_act[i + 1].data(), act.enc_act[i + 1].size());
    h = oh;
    w = ow;
  }
  act.latent_chw = act.enc_act[n + 1];
}

void decoder_forward(const Tokenizer& t, const ParamStore& p, const std::vector<int>& wids,
                     const std::vector<int>& bids, const std::vector<float>& latent_chw, int lh, int lw,
                     TokenizerActivations& act) {
  const auto& cfg = t.cfg;
  const int n = cfg.stages();
  act.dec_up.assign(n + 2, {});
  act.dec_act.assign(n + 2, {});
  const std::vector<float>* cur = &latent_chw;
  int h = lh, w = lw;
  for (int i = 0; i <= n + 1; ++i) {
    ConvSpec s = dec_spec(cfg, i);
    if (i >= 1 && i <= n) {
      act.dec_up[i].assign(static_cast<size_t>(s.in_c) * h * 2 * w * 2, 0.f);
      upsample2x_forward(cur->data(), s.in_c, h, w, act.dec_up[i].data());
      h *= 2;
      w *= 2;
      cur = &act.dec_up[i];
    }
    act.dec_act[i].assign(static_cast<size_t>(s.out_c) * h * w, 0.f);
    conv2d_forward(s, p.values(wids[i]), p.values(bids[i]), cur->data(), h, w, act.dec_act[i].data());
    if (i <= n)
      relu_forward(act.dec_act[i].data(), act.dec_act[i].size());
    else
      sigmoid_forward(act.dec_act[i].data(), act.dec_act[i].size());
    cur = &act.dec_act[i];
  }
  act.recon = act.dec_act[n + 1];
}

}  // namespace

LatentGrid Tokenizer::encode(const MaskImage& image) const {
  if (image.h <= 0 || image.w <= 0) throw ShapeError("encode: empty image");
  if (image.h % cfg.downsample != 0 || image.w % cfg.downsample != 0)
    throw ShapeError("encode: image " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                     " not divisible by downsample factor " + std::to_string(cfg.downsample));
  TokenizerActivations act;
  encoder_forward(*this, params, ids_.enc_w, ids_.enc_b, image, act);
  return chw_to_hwc(act.latent_chw, cfg.latent_dim, image.h / cfg.downsample, image.w / cfg.downsample);
}

MaskImage Tokenizer::decode(const LatentGrid& latent) const {
  if (latent.d != cfg.latent_dim) throw ShapeError("decode: latent depth mismatch");
  TokenizerActivations act;
  std::vector<float> chw = hwc_to_chw(latent);
  decoder_forward(*this, params, ids_.dec_w, ids_.dec_b, chw, latent.h, latent.w, act);
  MaskImage out(latent.h * cfg.downsample, latent.w * cfg.downsample);
  out.pixels = act.recon;
  return out;
}

uint64_t Tokenizer::param_hash() const {
  uint64_t h = 0xcbf29ce484222325ull;
  for (float f : params.values_) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

void Tokenizer::save(const std::string& path) const {
  Checkpoint ckpt;
  ckpt.kind = CkptKind::Tokenizer;
  ckpt.header = {static_cast<uint32_t>(cfg.codebook_size), static_cast<uint32_t>(cfg.latent_dim),
                 static_cast<uint32_t>(cfg.downsample), static_cast<uint32_t>(cfg.channels)};
  ckpt.schedule = cfg.schedule;
  for (const auto& e : params.entries()) {
    NamedTensor t;
    t.name = e.name;
    t.dims = e.dims;
    t.data.assign(params.values_.begin() + e.offset, params.values_.begin() + e.offset + e.count);
    ckpt.tensors.push_back(std::move(t));
  }
  save_checkpoint(path, ckpt);
}

Tokenizer Tokenizer::load(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path, CkptKind::Tokenizer);
  if (ckpt.header.size() != 4) throw IoError("tokenizer checkpoint header malformed: " + path);
  TokenizerConfig cfg;
  cfg.codebook_size = static_cast<int>(ckpt.header[0]);
  cfg.latent_dim = static_cast<int>(ckpt.header[1]);
  cfg.downsample = static_cast<int>(ckpt.header[2]);
  cfg.channels = static_cast<int>(ckpt.header[3]);
  cfg.schedule = ckpt.schedule;
  Tokenizer t;
  t.cfg = cfg;
  t.register_params();
  for (const auto& e : t.params.entries()) {
    const NamedTensor& nt = ckpt.tensor(e.name);
    if (nt.data.size() != e.count) throw IoError("tensor shape mismatch in " + path + ": " + e.name);
    std::copy(nt.data.begin(), nt.data.end(), t.params.values_.begin() + e.offset);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Stage-0 training
// ---------------------------------------------------------------------------

struct TokenizerTrainer {
  Tokenizer& tok;
  const TokenizerTrainConfig& tc;

  struct WorkerState {
    std::vector<float> grads;
    std::vector<int> code_usage;
    double loss_sum = 0.0;
    std::vector<Grid3> residual_pool;  // samples for codebook revival
  };

  // Forward + backward for one sample; accumulates scaled gradients.
  void sample_pass(const MaskImage& image, bool vq_active, double inv_batch, WorkerState& ws) {
    const auto& cfg = tok.cfg;
    const auto& p = tok.params;
    TokenizerActivations act;
    encoder_forward(tok, p, tok.ids_.enc_w, tok.ids_.enc_b, image, act);
    const int lh = image.h / cfg.downsample, lw = image.w / cfg.downsample;
    Grid3 z_e = chw_to_hwc(act.latent_chw, cfg.latent_dim, lh, lw);

    Grid3 dec_in_hwc;
    QuantizeTrace trace;
    MultiScaleTokenMaps maps;
    if (vq_active) {
      maps = multi_scale_quantize(z_e, tok.codebook(), cfg.schedule, &trace);
      dec_in_hwc = trace.accumulated;
    } else {
      dec_in_hwc = z_e;
    }

    std::vector<float> dec_in_chw = hwc_to_chw(dec_in_hwc);
    decoder_forward(tok, p, tok.ids_.dec_w, tok.ids_.dec_b, dec_in_chw, lh, lw, act);

    const size_t n_pix = act.recon.size();
    const size_t n_lat = z_e.data.size();

    double loss_rec = 0.0;
    std::vector<float> g(n_pix);
    for (size_t i = 0; i < n_pix; ++i) {
      float diff = act.recon[i] - image.pixels[i];
      loss_rec += static_cast<double>(diff) * diff;
      g[i] = 2.f * diff / static_cast<float>(n_pix);
    }
    loss_rec /= static_cast<double>(n_pix);

    double loss_commit = 0.0, loss_cb = 0.0;
    if (vq_active) {
      for (size_t i = 0; i < n_lat; ++i) {
        double diff = static_cast<double>(z_e.data[i]) - dec_in_hwc.data[i];
        loss_commit += diff * diff;
      }
      loss_commit /= static_cast<double>(n_lat);

      size_t n_cb = 0;
      for (const auto& r : trace.scale_residuals) n_cb += r.data.size();
      const Codebook cb = tok.codebook();
      const auto& cbe = p.entry(tok.ids_.codebook);
      for (size_t k = 0; k < maps.maps.size(); ++k) {
        const auto& m = maps.maps[k];
        const Grid3& res = trace.scale_residuals[k];
        for (int y = 0; y < m.h; ++y)
          for (int x = 0; x < m.w; ++x) {
            int row = m.at(y, x);
            ws.code_usage[row] += 1;
            const float* c = cb.row(row);
            const float* r = res.at(y, x);
            float* gc = ws.grads.data() + cbe.offset + static_cast<size_t>(row) * cfg.latent_dim;
            for (int d = 0; d < cfg.latent_dim; ++d) {
              double diff = static_cast<double>(c[d]) - r[d];
              loss_cb += diff * diff;
              gc[d] += static_cast<float>(2.0 * diff / static_cast<double>(n_cb) * inv_batch);
            }
          }
      }
      loss_cb /= static_cast<double>(n_cb);
      if (ws.residual_pool.size() < 64) ws.residual_pool.push_back(trace.scale_residuals.back());
    }

    double loss = loss_rec + tc.commitment_weight * loss_commit + loss_cb;
    ws.loss_sum += loss;

    // Decoder backward (g currently holds dL/d recon).
    const int n = cfg.stages();
    sigmoid_backward(act.recon.data(), g.data(), n_pix);
    std::vector<float> g_cur = std::move(g);
    int h = image.h, w = image.w;
    std::vector<float> g_prev;
    for (int i = n + 1; i >= 0; --i) {
      ConvSpec s = dec_spec(cfg, i);
      const std::vector<float>& input =
          (i >= 1 && i <= n) ? act.dec_up[i] : (i == 0 ? dec_in_chw : act.dec_act[i - 1]);
      // input spatial size equals current h, w
      g_prev.assign(input.size(), 0.f);
      const auto& we = p.entry(tok.ids_.dec_w[i]);
      const auto& be = p.entry(tok.ids_.dec_b[i]);
      conv2d_backward(s, p.values(tok.ids_.dec_w[i]), input.data(), h, w, g_cur.data(), g_prev.data(),
                      ws.grads.data() + we.offset, ws.grads.data() + be.offset);
      if (i >= 1 && i <= n) {
        h /= 2;
        w /= 2;
        std::vector<float> g_down(static_cast<size_t>(s.in_c) * h * w, 0.f);
        upsample2x_backward(g_prev.data(), s.in_c, h, w, g_down.data());
        g_prev = std::move(g_down);
      }
      if (i > 0) relu_backward(act.dec_act[i - 1].data(), g_prev.data(), g_prev.size());
      g_cur = std::move(g_prev);
    }

    // g_cur is dL/d(decoder input, CHW). Straight-through to the encoder
    // output plus the commitment term.
    Grid3 g_fhat = chw_to_hwc(g_cur, cfg.latent_dim, lh, lw);
    std::vector<float> g_ze_hwc(n_lat);
    for (size_t i = 0; i < n_lat; ++i) {
      double st = g_fhat.data[i];
      double commit = vq_active ? tc.commitment_weight * 2.0 *
                                      (static_cast<double>(z_e.data[i]) - dec_in_hwc.data[i]) /
                                      static_cast<double>(n_lat)
                                : 0.0;
      g_ze_hwc[i] = static_cast<float>(st + commit);
    }
    Grid3 g_ze_grid(lh, lw, cfg.latent_dim);
    g_ze_grid.data = g_ze_hwc;
    g_cur = hwc_to_chw(g_ze_grid);

    // Encoder backward.
    h = lh;
    w = lw;
    for (int i = n; i >= 0; --i) {
      ConvSpec s = enc_spec(cfg, i);
      const std::vector<float>& input = act.enc_act[i];
      int ih = (i < n) ? h * 2 : h;  // stride-2 stages halve the extent
      int iw = (i < n) ? w * 2 : w;
      g_prev.assign(input.size(), 0.f);
      const auto& we = p.entry(tok.ids_.enc_w[i]);
      const auto& be = p.entry(tok.ids_.enc_b[i]);
      conv2d_backward(s, p.values(tok.ids_.enc_w[i]), input.data(), ih, iw, g_cur.data(), g_prev.data(),
                      ws.grads.data() + we.offset, ws.grads.data() + be.offset);
      if (i > 0) relu_backward(act.enc_act[i].data(), g_prev.data(), g_prev.size());
      g_cur = std::move(g_prev);
      h = ih;
      w = iw;
    }
  }
};

TokenizerTrainResult train_tokenizer(const std::vector<MaskImage>& dataset, const TokenizerConfig& cfg,
                                     const TokenizerTrainConfig& tc,
                                     const std::function<void(const std::string&)>& log_sink) {
  if (dataset.empty()) throw Error("train_tokenizer: empty dataset");
  cfg.validate();

  TokenizerTrainResult result{Tokenizer::init(cfg), {}};
  Tokenizer& tok = result.tokenizer;
  AdamW opt(tok.params.total(), tc.beta1, tc.beta2, tc.eps, 0.0);
  Rng rng(tc.seed);
  const int threads = std::max(1, tc.threads);
  const auto& cbe = tok.params.entry(tok.ids_.codebook);

  auto emit = [&](const std::string& line) {
    result.log_lines.push_back(line);
    if (log_sink) log_sink(line);
  };

  bool codebook_seeded = false;
  std::vector<int> usage_window(cfg.codebook_size, 0);

  for (int step = 0; step < tc.steps; ++step) {
    const bool vq_active = step >= tc.warmup_autoencoder_steps;

    if (vq_active && !codebook_seeded) {
      // Seed the codebook from downsampled encoder outputs across scales.
      std::vector<std::vector<float>> candidates;
      Rng seed_rng = rng.fork(9000);
      for (int b = 0; b < 4 * tc.batch_size && candidates.size() < 4096; ++b) {
        const MaskImage& img = dataset[static_cast<size_t>(seed_rng.uniform_int(0, dataset.size() - 1))];
        LatentGrid z = tok.encode(img);
        for (const auto& dims : cfg.schedule) {
          Grid3 down = bilinear_resize(z, dims.h, dims.w);
          for (int y = 0; y < down.h; ++y)
            for (int x = 0; x < down.w; ++x)
              candidates.emplace_back(down.at(y, x), down.at(y, x) + cfg.latent_dim);
        }
      }
      float* cb = tok.params.values_.data() + cbe.offset;
      for (int v = 0; v < cfg.codebook_size; ++v) {
        const auto& c = candidates[static_cast<size_t>(seed_rng.uniform_int(0, candidates.size() - 1))];
        for (int d = 0; d < cfg.latent_dim; ++d)
          cb[static_cast<size_t>(v) * cfg.latent_dim + d] =
              c[d] + static_cast<float>(seed_rng.normal() * 1e-3);
      }
      opt.reset_slice(cbe.offset, cbe.count);
      codebook_seeded = true;
    }

    // Assemble the batch, then split across workers.
    std::vector<const MaskImage*> batch(tc.batch_size);
    for (int b = 0; b < tc.batch_size; ++b)
      batch[b] = &dataset[static_cast<size_t>(rng.uniform_int(0, dataset.size() - 1))];

    std::vector<TokenizerTrainer::WorkerState> workers(threads);
    for (auto& ws : workers) {
      ws.grads.assign(tok.params.total(), 0.f);
      ws.code_usage.assign(cfg.codebook_size, 0);
    }
    TokenizerTrainer trainer{tok, tc};
    const double inv_batch = 1.0 / tc.batch_size;

    auto run_worker = [&](int t) {
      for (int b = t; b < tc.batch_size; b += threads)
        trainer.sample_pass(*batch[b], vq_active, inv_batch, workers[t]);
    };
    if (threads == 1) {
      run_worker(0);
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t) pool.emplace_back(run_worker, t);
      for (auto& th : pool) th.join();
    }

    // Deterministic reduction: fixed worker order. Non-codebook gradients
    // carry the 1/batch factor here (codebook terms were scaled in place).
    double loss = 0.0;
    for (int t = 0; t < threads; ++t) {
      loss += workers[t].loss_sum;
      const float* wg = workers[t].grads.data();
      float* g = tok.params.grads_.data();
      for (size_t i = 0; i < tok.params.total(); ++i) {
        bool is_cb = i >= cbe.offset && i < cbe.offset + cbe.count;
        g[i] += is_cb ? wg[i] : static_cast<float>(wg[i] * inv_batch);
      }
      for (int v = 0; v < cfg.codebook_size; ++v) usage_window[v] += workers[t].code_usage[v];
    }
    loss *= inv_batch;
    if (!std::isfinite(loss))
      throw DivergenceError("tokenizer training diverged at step " + std::to_string(step));

    opt.step(tok.params, tc.lr);
    tok.params.zero_grads();

    // Revive codebook rows unused over the window.
    if (vq_active && tc.revival_interval > 0 && (step + 1) % tc.revival_interval == 0) {
      std::vector<const Grid3*> pool;
      for (const auto& ws : workers)
        for (const auto& r : ws.residual_pool) pool.push_back(&r);
      if (!pool.empty()) {
        Rng rev = rng.fork(1000 + step);
        float* cb = tok.params.values_.data() + cbe.offset;
        for (int v = 0; v < cfg.codebook_size; ++v) {
          if (usage_window[v] > 0) continue;
          const Grid3& r = *pool[static_cast<size_t>(rev.uniform_int(0, pool.size() - 1))];
          int cell = static_cast<int>(rev.uniform_int(0, r.h * r.w - 1));
          const float* src = r.data.data() + static_cast<size_t>(cell) * cfg.latent_dim;
          for (int d = 0; d < cfg.latent_dim; ++d)
            cb[static_cast<size_t>(v) * cfg.latent_dim + d] =
                src[d] + static_cast<float>(rev.normal() * 1e-3);
          opt.reset_slice(cbe.offset + static_cast<size_t>(v) * cfg.latent_dim,
                          static_cast<size_t>(cfg.latent_dim));
        }
      }
      std::fill(usage_window.begin(), usage_window.end(), 0);
    }

    if (tc.log_every > 0 && (step % tc.log_every == 0 || step + 1 == tc.steps)) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "{\"step\":%d,\"lr\":%.6g,\"loss\":%.6f}", step, tc.lr, loss);
      emit(buf);
    }
  }

  tok.params.check_finite("tokenizer training");
  return result;
}

}  // namespace scaleseg

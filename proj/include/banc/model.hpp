//
//  model.hpp — the binaural codec network: shared front end, speech and
//  impulse-response encoders, projectors, residual vector quantizers,
//  speaker decoders with optional latent masks, impulse-response decoders
//  and the two adversarial discriminators.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "banc/nn.hpp"

namespace banc::model {

using ad::Tape;
using ad::Tensor;

// All architectural hyperparameters. The stride products are load-bearing:
// speech codes run at 1/300 of the sample rate and IR codes at 1/6000, and
// the decoders must invert those factors exactly.
struct ModelConfig {
  int sample_rate = 48000;
  double chunk_seconds = 2.0;
  int speakers = 1;
  std::vector<int> speech_strides{2, 2, 3, 5, 5};
  std::vector<int> ir_strides{1500, 2, 2};
  std::vector<int> speech_decoder_strides{5, 5, 3, 2, 2};
  std::vector<int> ir_decoder_strides{5, 5, 5, 4, 3, 2};
  std::vector<int> ir_encoder_kernels{96001, 41, 41};
  int base_channels = 16;
  int code_dim = 64;
  int codebooks = 8;
  int codebook_size = 1024;
  double scale = 1.0;
  bool use_mag_loss = true;
  double lambda_adv = 1.0;
  double lambda_vq = 1.0;
  uint64_t seed = 1;

  int64_t chunk_samples() const {
    return static_cast<int64_t>(chunk_seconds * sample_rate + 0.5);
  }
  int64_t speech_factor() const {
    int64_t f = 1;
    for (int s : speech_strides) f *= s;
    return f;
  }
  int64_t ir_factor() const {
    int64_t f = 1;
    for (int s : ir_strides) f *= s;
    return f;
  }
  int64_t speech_decoder_factor() const {
    int64_t f = 1;
    for (int s : speech_decoder_strides) f *= s;
    return f;
  }
  int64_t ir_decoder_factor() const {
    int64_t f = 1;
    for (int s : ir_decoder_strides) f *= s;
    return f;
  }
  int64_t speech_frames() const { return chunk_samples() / speech_factor(); }
  int64_t ir_frames() const { return chunk_samples() / ir_factor(); }
  int64_t ir_samples() const { return ir_frames() * ir_decoder_factor(); }
  int64_t latent_dim() const { return static_cast<int64_t>(base_channels) << speech_strides.size(); }

  int bits_per_index() const {
    int bits = 0;
    while ((1 << bits) < codebook_size) ++bits;
    return bits;
  }
  int bits_per_frame() const { return codebooks * bits_per_index(); }

  void validate() const;
};

ModelConfig reference_config();
ModelConfig desk_config();
ModelConfig toy_config();  // smallest legal geometry, for gradient suites

// Structured-text (JSON) round trip with exactly the field names above;
// unknown keys are rejected.
std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& text);
ModelConfig config_from_file(const std::string& path);

// Per-stream quantization output.
template <typename T>
struct QuantizedCode {
  std::vector<uint16_t> indices;  // [batch][frame][stage]
  Tensor<T> straight_through;     // [B, code_dim, T]
  Tensor<T> commit;               // scalar
};

template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg), reg_(cfg.seed) {
    cfg_.validate();
    build();
  }

  const ModelConfig& config() const { return cfg_; }
  nn::Registry<T>& registry() { return reg_; }

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  // Freezes a named group: gradients stop accumulating and stateful layers
  // (batch norm, quantizer EMA) stop updating.
  void freeze_group(const std::string& group) {
    bool found = false;
    for (auto& e : reg_.entries()) {
      if (e.group == group) {
        e.tensor.set_requires_grad(false);
        found = true;
      }
    }
    require(found, "freeze_group: unknown group ", group);
    if (group == "ir_encoder") {
      for (auto& b : ir_encoder_bns_) b.frozen = true;
    }
    if (group == "speech_quantizer") speech_vq_.frozen = true;
    if (group == "ir_quantizer") ir_vq_.frozen = true;
  }

  static const std::vector<std::string>& analysis_groups() {
    static const std::vector<std::string> g{
        "common_encoder", "speech_encoder", "ir_encoder",     "speech_projector",
        "ir_projector",   "speech_quantizer", "ir_quantizer",
    };
    return g;
  }

  // --- forward pieces -----------------------------------------------------

  struct Latents {
    Tensor<T> speech;  // [B, latent, L/300]
    Tensor<T> ir;      // [B, latent, L/6000]
  };

  Latents encode(Tape<T>* tape, const Tensor<T>& binaural) {
    require(binaural.rank() == 3 && binaural.size(1) == 2,
            "encode: input must be [batch, 2, samples]");
    require(binaural.size(2) == cfg_.chunk_samples(), "encode: expected ",
            cfg_.chunk_samples(), " samples per chunk, got ", binaural.size(2));
    auto shared = common_.forward(tape, binaural);
    // speech branch
    auto s = speech_head_.forward(tape, shared);
    for (const auto& blk : speech_blocks_) s = blk.forward(tape, s);
    // impulse-response branch
    auto ir = shared;
    for (size_t i = 0; i < ir_convs_.size(); ++i) {
      ir = ir_convs_[i].forward(tape, ir);
      if (i > 0) ir = ir_encoder_bns_[i - 1].forward(tape, ir, training_);
      ir = ad::leaky_relu(tape, ir, T(0.2));
    }
    return {s, ir};
  }

  Tensor<T> project_speech(Tape<T>* tape, const Tensor<T>& z) {
    return speech_proj_.forward(tape, z);
  }
  Tensor<T> project_ir(Tape<T>* tape, const Tensor<T>& z) { return ir_proj_.forward(tape, z); }

  QuantizedCode<T> quantize_speech(Tape<T>* tape, const Tensor<T>& code, Rng* rng = nullptr) {
    auto r = speech_vq_.quantize(tape, code, training_, rng);
    return {std::move(r.indices), r.quantized, r.commit};
  }
  QuantizedCode<T> quantize_ir(Tape<T>* tape, const Tensor<T>& code, Rng* rng = nullptr) {
    auto r = ir_vq_.quantize(tape, code, training_, rng);
    return {std::move(r.indices), r.quantized, r.commit};
  }

  Tensor<T> dequantize_speech(const std::vector<uint16_t>& idx, int64_t B, int64_t Tn) const {
    return speech_vq_.dequantize(idx, B, Tn);
  }
  Tensor<T> dequantize_ir(const std::vector<uint16_t>& idx, int64_t B, int64_t Tn) const {
    return ir_vq_.dequantize(idx, B, Tn);
  }

  // code [B, code_dim, T] -> one mono waveform [B, 1, T*300] per speaker.
  // With two speakers the shared post-head latent C is split by learned
  // sigmoid masks, one per speaker, before the per-speaker decoder stacks.
  std::vector<Tensor<T>> decode_speech(Tape<T>* tape, const Tensor<T>& code) {
    auto c = speech_dec_head_.forward(tape, code);
    std::vector<Tensor<T>> outs;
    for (int s = 0; s < cfg_.speakers; ++s) {
      Tensor<T> h = c;
      if (cfg_.speakers > 1) {
        auto mask = ad::sigmoid(tape, mask_heads_[s].forward(tape, c));
        h = ad::mul(tape, c, mask);
      }
      for (const auto& blk : speech_dec_blocks_[s]) h = blk.forward(tape, h);
      h = ad::elu(tape, h);
      outs.push_back(speech_dec_tails_[s].forward(tape, h));
    }
    return outs;
  }

  // Per-speaker latent masks (two-speaker build only), for inspection.
  std::vector<Tensor<T>> speech_masks(Tape<T>* tape, const Tensor<T>& code) {
    require(cfg_.speakers > 1, "speech_masks: single-speaker build has no masks");
    auto c = speech_dec_head_.forward(tape, code);
    std::vector<Tensor<T>> masks;
    for (int s = 0; s < cfg_.speakers; ++s) {
      masks.push_back(ad::sigmoid(tape, mask_heads_[s].forward(tape, c)));
    }
    return masks;
  }

  // code [B, code_dim, T_ir] -> one two-channel impulse response
  // [B, 2, T_ir * 3000] per speaker. The two-speaker build runs one full
  // replica per speaker, doubling the channels of every decoder layer.
  std::vector<Tensor<T>> decode_ir(Tape<T>* tape, const Tensor<T>& code) {
    std::vector<Tensor<T>> outs;
    for (int s = 0; s < cfg_.speakers; ++s) {
      auto h = ir_dec_heads_[s].forward(tape, code);
      for (const auto& blk : ir_dec_blocks_[s]) h = blk.forward(tape, h);
      h = ad::elu(tape, h);
      outs.push_back(ir_dec_tails_[s].forward(tape, h));
    }
    return outs;
  }

  // Renders each speaker's clean estimate through its impulse-response
  // estimate and sums: the decoded binaural signal.
  Tensor<T> reconstruct(Tape<T>* tape, const std::vector<Tensor<T>>& cleans,
                        const std::vector<Tensor<T>>& birs) {
    require(cleans.size() == birs.size() && !cleans.empty(), "reconstruct: speaker count mismatch");
    Tensor<T> left, right;
    for (size_t s = 0; s < cleans.size(); ++s) {
      const auto& c = cleans[s];
      const auto& b = birs[s];
      require(c.rank() == 3 && c.size(1) == 1, "reconstruct: clean must be [B,1,L]");
      require(b.rank() == 3 && b.size(1) == 2, "reconstruct: impulse response must be [B,2,L]");
      const int64_t B = c.size(0), L = c.size(2), Lk = b.size(2);
      auto flat = ad::reshape(tape, c, {B, L});
      auto kl = ad::reshape(tape, ad::slice(tape, b, 1, 0, 1), {B, Lk});
      auto kr = ad::reshape(tape, ad::slice(tape, b, 1, 1, 1), {B, Lk});
      auto yl = ad::fir_causal(tape, flat, kl);
      auto yr = ad::fir_causal(tape, flat, kr);
      left = s == 0 ? yl : ad::add(tape, left, yl);
      right = s == 0 ? yr : ad::add(tape, right, yr);
    }
    const int64_t B = cleans[0].size(0), L = cleans[0].size(2);
    auto l3 = ad::reshape(tape, left, {B, int64_t(1), L});
    auto r3 = ad::reshape(tape, right, {B, int64_t(1), L});
    return ad::concat(tape, {l3, r3}, 1);
  }

  std::vector<Tensor<T>> discriminate_binaural(Tape<T>* tape, const Tensor<T>& x) const {
    return disc_binaural_.forward(tape, x);
  }
  std::vector<Tensor<T>> discriminate_clean(Tape<T>* tape, const Tensor<T>& x) const {
    return disc_clean_.forward(tape, x);
  }

  // Scoped no-grad guard over the discriminator parameters; used when the
  // generator trains against fixed discriminators.
  template <typename Fn>
  auto with_frozen_discriminators(Fn&& fn) {
    std::vector<std::pair<Tensor<T>*, bool>> saved;
    for (auto& e : reg_.entries()) {
      if (e.group == "disc_binaural" || e.group == "disc_clean") {
        saved.emplace_back(&e.tensor, e.tensor.requires_grad());
        e.tensor.set_requires_grad(false);
      }
    }
    auto result = fn();
    for (auto& [t, rg] : saved) t->set_requires_grad(rg);
    return result;
  }

  // Convenience full pass used by training and the dry run.
  struct Forward {
    std::vector<Tensor<T>> cleans;
    std::vector<Tensor<T>> birs;
    Tensor<T> binaural;
    Tensor<T> vq_commit;
    std::vector<uint16_t> speech_indices;
    std::vector<uint16_t> ir_indices;
  };

  Forward forward(Tape<T>* tape, const Tensor<T>& binaural, Rng* rng = nullptr) {
    auto lat = encode(tape, binaural);
    auto sc = quantize_speech(tape, project_speech(tape, lat.speech), rng);
    auto ic = quantize_ir(tape, project_ir(tape, lat.ir), rng);
    Forward f;
    f.cleans = decode_speech(tape, sc.straight_through);
    f.birs = decode_ir(tape, ic.straight_through);
    f.binaural = reconstruct(tape, f.cleans, f.birs);
    f.vq_commit = ad::add(tape, sc.commit, ic.commit);
    f.speech_indices = std::move(sc.indices);
    f.ir_indices = std::move(ic.indices);
    return f;
  }

  int64_t parameter_count(const std::string& group_prefix = "") const {
    int64_t n = 0;
    for (const auto& e : reg_.entries()) {
      if (e.group.rfind(group_prefix, 0) == 0) n += e.tensor.numel();
    }
    return n;
  }

 private:
  void build() {
    const int64_t base = cfg_.base_channels;
    const int64_t latent = cfg_.latent_dim();
    const int64_t code = cfg_.code_dim;

    common_ = nn::Conv1d<T>(reg_, "common_encoder", "common_encoder.conv", 2, 2, 3, 1);

    speech_head_ = nn::Conv1d<T>(reg_, "speech_encoder", "speech_encoder.head", 2, base, 7, 1);
    int64_t c = base;
    for (size_t i = 0; i < cfg_.speech_strides.size(); ++i) {
      speech_blocks_.emplace_back(reg_, "speech_encoder",
                                  "speech_encoder.block" + std::to_string(i), c,
                                  cfg_.speech_strides[i]);
      c *= 2;
    }
    require(c == latent, "speech encoder: channel ladder ends at ", c, ", expected ", latent);

    // IR encoder: three conv blocks, batch norm on all but the first.
    const int64_t ir_ch[3] = {8 * base, 16 * base, 32 * base};
    int64_t prev = 2;
    for (int i = 0; i < 3; ++i) {
      ir_convs_.emplace_back(reg_, "ir_encoder", "ir_encoder.conv" + std::to_string(i), prev,
                             ir_ch[i], cfg_.ir_encoder_kernels[i], cfg_.ir_strides[i]);
      if (i > 0) {
        ir_encoder_bns_.emplace_back(reg_, "ir_encoder", "ir_encoder.bn" + std::to_string(i),
                                     ir_ch[i]);
      }
      prev = ir_ch[i];
    }
    require(prev == latent, "ir encoder: channel ladder ends at ", prev, ", expected ", latent);

    speech_proj_ = nn::Conv1d<T>(reg_, "speech_projector", "speech_projector.conv", latent, code,
                                 1, 1);
    ir_proj_ = nn::Conv1d<T>(reg_, "ir_projector", "ir_projector.conv", latent, code, 1, 1);

    speech_vq_ = nn::Rvq<T>(reg_, "speech_quantizer", "speech_quantizer", cfg_.codebooks,
                            cfg_.codebook_size, code);
    ir_vq_ = nn::Rvq<T>(reg_, "ir_quantizer", "ir_quantizer", cfg_.codebooks, cfg_.codebook_size,
                        code);

    speech_dec_head_ = nn::Conv1d<T>(reg_, "speech_decoder", "speech_decoder.head", code, latent,
                                     7, 1);
    if (cfg_.speakers > 1) {
      for (int s = 0; s < cfg_.speakers; ++s) {
        mask_heads_.emplace_back(reg_, "mask_heads", "mask_heads.speaker" + std::to_string(s),
                                 latent, latent, 1, 1);
      }
    }
    for (int s = 0; s < cfg_.speakers; ++s) {
      std::vector<nn::DecoderBlock<T>> blocks;
      int64_t dc = latent;
      for (size_t i = 0; i < cfg_.speech_decoder_strides.size(); ++i) {
        blocks.emplace_back(reg_, "speech_decoder",
                            "speech_decoder.speaker" + std::to_string(s) + ".block" +
                                std::to_string(i),
                            dc, cfg_.speech_decoder_strides[i]);
        dc /= 2;
      }
      speech_dec_blocks_.push_back(std::move(blocks));
      speech_dec_tails_.emplace_back(reg_, "speech_decoder",
                                     "speech_decoder.speaker" + std::to_string(s) + ".tail", dc,
                                     1, 7, 1);
    }

    for (int s = 0; s < cfg_.speakers; ++s) {
      ir_dec_heads_.emplace_back(reg_, "ir_decoder",
                                 "ir_decoder.speaker" + std::to_string(s) + ".head", code, latent,
                                 7, 1);
      std::vector<nn::DecoderBlock<T>> blocks;
      int64_t dc = latent;
      for (size_t i = 0; i < cfg_.ir_decoder_strides.size(); ++i) {
        blocks.emplace_back(
            reg_, "ir_decoder",
            "ir_decoder.speaker" + std::to_string(s) + ".block" + std::to_string(i), dc,
            cfg_.ir_decoder_strides[i]);
        dc /= 2;
      }
      require(dc >= 2, "ir decoder: channel ladder exhausted (", dc, " channels before tail)");
      ir_dec_blocks_.push_back(std::move(blocks));
      ir_dec_tails_.emplace_back(reg_, "ir_decoder",
                                 "ir_decoder.speaker" + std::to_string(s) + ".tail", dc, 2, 7, 1);
    }

    disc_binaural_ = nn::Discriminator<T>(reg_, "disc_binaural", 2);
    disc_clean_ = nn::Discriminator<T>(reg_, "disc_clean", 1);

    validate_geometry();
  }

  // Walks the length algebra of every layer without touching tensors, so a
  // bad configuration fails at construction naming the layer.
  void validate_geometry() const {
    const int64_t L = cfg_.chunk_samples();
    int64_t len = L;  // common encoder: stride 1
    for (size_t i = 0; i < cfg_.speech_strides.size(); ++i) {
      require(len % cfg_.speech_strides[i] == 0, "speech_encoder.block", i, ": length ", len,
              " not divisible by stride ", cfg_.speech_strides[i]);
      len /= cfg_.speech_strides[i];
    }
    require(len == cfg_.speech_frames(), "speech encoder: expected ", cfg_.speech_frames(),
            " frames, got ", len);
    int64_t ir_len = L;
    for (size_t i = 0; i < cfg_.ir_strides.size(); ++i) {
      require(ir_len % cfg_.ir_strides[i] == 0, "ir_encoder.conv", i, ": length ", ir_len,
              " not divisible by stride ", cfg_.ir_strides[i]);
      ir_len /= cfg_.ir_strides[i];
    }
    require(ir_len == cfg_.ir_frames(), "ir encoder: expected ", cfg_.ir_frames(), " frames, got ",
            ir_len);
    int64_t dec = cfg_.speech_frames();
    for (int s : cfg_.speech_decoder_strides) dec *= s;
    require(dec == L, "speech decoder: output length ", dec, ", expected ", L);
  }

  ModelConfig cfg_;
  nn::Registry<T> reg_;
  bool training_ = true;

  nn::Conv1d<T> common_;
  nn::Conv1d<T> speech_head_;
  std::vector<nn::EncoderBlock<T>> speech_blocks_;
  std::vector<nn::Conv1d<T>> ir_convs_;
  std::vector<nn::BatchNorm1d<T>> ir_encoder_bns_;
  nn::Conv1d<T> speech_proj_, ir_proj_;
  nn::Rvq<T> speech_vq_, ir_vq_;
  nn::Conv1d<T> speech_dec_head_;
  std::vector<nn::Conv1d<T>> mask_heads_;
  std::vector<std::vector<nn::DecoderBlock<T>>> speech_dec_blocks_;
  std::vector<nn::Conv1d<T>> speech_dec_tails_;
  std::vector<nn::Conv1d<T>> ir_dec_heads_;
  std::vector<std::vector<nn::DecoderBlock<T>>> ir_dec_blocks_;
  std::vector<nn::Conv1d<T>> ir_dec_tails_;
  nn::Discriminator<T> disc_binaural_;
  nn::Discriminator<T> disc_clean_;
};

}  // namespace banc::model

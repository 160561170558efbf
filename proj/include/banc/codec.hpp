//
//  codec.hpp — chunked encode/decode between waveforms and coded streams.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <utility>
#include <vector>

#include "banc/bitstream.hpp"
#include "banc/checkpoint.hpp"
#include "banc/model.hpp"

namespace banc::codec {

template <typename T>
bits::StreamHeader header_for(const model::ModelConfig& cfg, int64_t total_samples) {
  bits::StreamHeader h;
  h.sample_rate = static_cast<uint32_t>(cfg.sample_rate);
  h.speakers = static_cast<uint8_t>(cfg.speakers);
  h.num_codebooks = static_cast<uint8_t>(cfg.codebooks);
  h.codebook_size = static_cast<uint16_t>(cfg.codebook_size);
  h.speech_factor = static_cast<uint16_t>(cfg.speech_factor());
  h.ir_factor = static_cast<uint16_t>(cfg.ir_factor());
  h.chunk_samples = static_cast<uint32_t>(cfg.chunk_samples());
  h.total_samples = static_cast<uint32_t>(total_samples);
  return h;
}

template <typename T>
void check_header(const model::ModelConfig& cfg, const bits::StreamHeader& h) {
  require(h.sample_rate == static_cast<uint32_t>(cfg.sample_rate), "codec: stream rate ",
          h.sample_rate, " differs from model rate ", cfg.sample_rate);
  require(h.speakers == cfg.speakers, "codec: stream speakers ", int(h.speakers),
          " differ from model speakers ", cfg.speakers);
  require(h.num_codebooks == cfg.codebooks && h.codebook_size == cfg.codebook_size,
          "codec: quantizer geometry mismatch");
  require(h.speech_factor == cfg.speech_factor() && h.ir_factor == cfg.ir_factor(),
          "codec: downsample factors mismatch");
  require(h.chunk_samples == static_cast<uint32_t>(cfg.chunk_samples()),
          "codec: chunk size mismatch");
}

// Splits the input into non-overlapping model chunks (the tail zero-padded),
// runs the analysis side and returns the quantizer indices per chunk.
template <typename T>
std::pair<bits::StreamHeader, std::vector<bits::ChunkCodes>> encode_buffer(
    model::Model<T>& m, const AudioBuffer& input) {
  input.validate();
  const auto& cfg = m.config();
  require(input.channels() == 2, "encode: input must be binaural (2 channels)");
  require(input.sample_rate == cfg.sample_rate, "encode: input rate ", input.sample_rate,
          " differs from model rate ", cfg.sample_rate);
  const int64_t chunk = cfg.chunk_samples();
  const int64_t total = static_cast<int64_t>(input.frames());
  const int64_t n_chunks = (total + chunk - 1) / chunk;
  require(n_chunks > 0, "encode: empty input");

  m.set_training(false);
  std::vector<bits::ChunkCodes> chunks;
  for (int64_t c = 0; c < n_chunks; ++c) {
    ad::Tensor<T> x({1, 2, chunk});
    for (int ch = 0; ch < 2; ++ch) {
      for (int64_t i = 0; i < chunk; ++i) {
        const int64_t src = c * chunk + i;
        x.data()[ch * chunk + i] =
            src < total ? static_cast<T>(input.samples[ch][src]) : T(0);
      }
    }
    auto lat = m.encode(nullptr, x);
    auto sc = m.quantize_speech(nullptr, m.project_speech(nullptr, lat.speech));
    auto ic = m.quantize_ir(nullptr, m.project_ir(nullptr, lat.ir));
    bits::ChunkCodes codes;
    codes.speech = std::move(sc.indices);
    codes.ir = std::move(ic.indices);
    chunks.push_back(std::move(codes));
  }
  return {header_for<T>(cfg, total), std::move(chunks)};
}

template <typename T>
struct Decoded {
  AudioBuffer binaural;               // reconstructed mix, trimmed to total_samples
  std::vector<AudioBuffer> cleans;    // per speaker, trimmed
  std::vector<Bir> birs;              // per speaker, first-chunk estimates
};

template <typename T>
Decoded<T> decode_stream(model::Model<T>& m, const bits::StreamHeader& h,
                         const std::vector<bits::ChunkCodes>& chunks) {
  const auto& cfg = m.config();
  check_header<T>(cfg, h);
  require(static_cast<int64_t>(chunks.size()) == h.num_chunks(), "codec: chunk count mismatch");

  m.set_training(false);
  const int64_t chunk = cfg.chunk_samples();
  const int64_t total = h.total_samples;
  Decoded<T> out;
  out.binaural = AudioBuffer(2, total, cfg.sample_rate);
  for (int s = 0; s < cfg.speakers; ++s) {
    out.cleans.emplace_back(1, total, cfg.sample_rate);
  }
  if (chunks.size() > 1) {
    log_info("decode: ", chunks.size(),
             " chunks; impulse-response outputs are the first chunk's estimates");
  }

  for (size_t c = 0; c < chunks.size(); ++c) {
    auto speech_code = m.dequantize_speech(chunks[c].speech, 1, cfg.speech_frames());
    auto ir_code = m.dequantize_ir(chunks[c].ir, 1, cfg.ir_frames());
    auto cleans = m.decode_speech(nullptr, speech_code);
    auto birs = m.decode_ir(nullptr, ir_code);
    auto mix = m.reconstruct(nullptr, cleans, birs);

    const int64_t base = static_cast<int64_t>(c) * chunk;
    const int64_t keep = std::min(chunk, total - base);
    for (int ch = 0; ch < 2; ++ch) {
      for (int64_t i = 0; i < keep; ++i) {
        out.binaural.samples[ch][base + i] = static_cast<double>(mix.data()[ch * chunk + i]);
      }
    }
    for (int s = 0; s < cfg.speakers; ++s) {
      for (int64_t i = 0; i < keep; ++i) {
        out.cleans[s].samples[0][base + i] = static_cast<double>(cleans[s].data()[i]);
      }
      if (c == 0) {
        Bir bir(cfg.ir_samples(), cfg.sample_rate);
        for (int64_t i = 0; i < cfg.ir_samples(); ++i) {
          bir.left[i] = static_cast<double>(birs[s].data()[i]);
          bir.right[i] = static_cast<double>(birs[s].data()[cfg.ir_samples() + i]);
        }
        out.birs.push_back(std::move(bir));
      }
    }
  }
  return out;
}

}  // namespace banc::codec

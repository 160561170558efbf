//
//  bitstream.hpp — fixed-rate serialization of quantizer indices, plus
//  bandwidth and compression accounting.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "banc/common.hpp"

namespace banc::bits {

// Stream metadata. total_samples records the true input length; the final
// chunk is zero-padded up to chunk_samples and the decoder trims it back.
struct StreamHeader {
  uint16_t version = 1;
  uint32_t sample_rate = 48000;
  uint8_t speakers = 1;
  uint8_t num_codebooks = 8;
  uint16_t codebook_size = 1024;
  uint16_t speech_factor = 300;
  uint16_t ir_factor = 6000;
  uint32_t chunk_samples = 96000;
  uint32_t total_samples = 96000;

  int bits_per_index() const {
    int b = 0;
    while ((1u << b) < codebook_size) ++b;
    return b;
  }
  int bits_per_frame() const { return num_codebooks * bits_per_index(); }
  int64_t speech_frames_per_chunk() const { return chunk_samples / speech_factor; }
  int64_t ir_frames_per_chunk() const { return chunk_samples / ir_factor; }
  int64_t payload_bits_per_chunk() const {
    return (speech_frames_per_chunk() + ir_frames_per_chunk()) * bits_per_frame();
  }
  int64_t payload_bytes_per_chunk() const { return (payload_bits_per_chunk() + 7) / 8; }
  int64_t num_chunks() const {
    return (static_cast<int64_t>(total_samples) + chunk_samples - 1) / chunk_samples;
  }

  void validate() const;
};

// Quantizer indices of one chunk, frame-major with num_codebooks entries
// per frame.
struct ChunkCodes {
  std::vector<uint16_t> speech;
  std::vector<uint16_t> ir;
};

std::vector<uint8_t> pack(const StreamHeader& header, const std::vector<ChunkCodes>& chunks);
std::pair<StreamHeader, std::vector<ChunkCodes>> unpack(const std::vector<uint8_t>& bytes);

void write_stream(const std::string& path, const StreamHeader& header,
                  const std::vector<ChunkCodes>& chunks);
std::pair<StreamHeader, std::vector<ChunkCodes>> read_stream(const std::string& path);
StreamHeader read_header(const std::string& path);

// Coded bits per second: one speech code stream plus one IR code stream.
double bandwidth_bps(const StreamHeader& header);

// Bits per second when each of the two channels is coded independently at
// the speech frame rate (the dual-mono comparator).
double comparator_bps(const StreamHeader& header);

struct CompressionReport {
  double coded_bps = 0.0;
  double comparator = 0.0;       // dual-mono coding of both channels
  double savings_fraction = 0.0; // 1 - coded/comparator
  double raw_bps = 0.0;          // PCM at bits_per_sample_raw
  double bit_ratio = 0.0;        // raw_bps / coded_bps
  double mono_bit_ratio = 0.0;   // raw mono bps / speech-stream bps
  double stride_mean_ratio = 0.0;  // arithmetic mean of the two factors
};

CompressionReport compression_report(const StreamHeader& header, int bits_per_sample_raw = 16);

}  // namespace banc::bits

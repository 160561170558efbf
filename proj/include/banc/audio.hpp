//
//  audio.hpp — waveform containers and WAV file I/O.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "banc/common.hpp"

namespace banc {

// Multichannel sampled waveform, planar layout, amplitudes nominally in [-1, 1].
struct AudioBuffer {
  std::vector<std::vector<double>> samples;  // [channel][frame]
  int sample_rate = 0;

  AudioBuffer() = default;
  AudioBuffer(int channels, size_t frames, int rate)
      : samples(channels, std::vector<double>(frames, 0.0)), sample_rate(rate) {}

  int channels() const { return static_cast<int>(samples.size()); }
  size_t frames() const { return samples.empty() ? 0 : samples[0].size(); }

  void validate() const {
    require(sample_rate > 0, "audio buffer: sample rate must be positive");
    require(!samples.empty(), "audio buffer: no channels");
    for (const auto& ch : samples) {
      require(ch.size() == samples[0].size(), "audio buffer: channel lengths differ");
      for (double v : ch) require(std::isfinite(v), "audio buffer: non-finite sample");
    }
  }
};

// Two-channel impulse response of one second. Left/right paths from a source
// position to the two ears, including reflections and the reverberant tail.
struct Bir {
  std::vector<double> left;
  std::vector<double> right;
  int sample_rate = 0;

  Bir() = default;
  Bir(size_t len, int rate) : left(len, 0.0), right(len, 0.0), sample_rate(rate) {}

  size_t length() const { return left.size(); }

  void validate() const {
    require(sample_rate > 0, "impulse response: sample rate must be positive");
    require(left.size() == right.size(), "impulse response: channel lengths differ");
    require(!left.empty(), "impulse response: empty");
    double energy = 0.0;
    for (double v : left) {
      require(std::isfinite(v), "impulse response: non-finite value");
      energy += v * v;
    }
    for (double v : right) {
      require(std::isfinite(v), "impulse response: non-finite value");
      energy += v * v;
    }
    require(energy > 0.0, "impulse response: zero energy");
  }

  AudioBuffer to_buffer() const {
    AudioBuffer b;
    b.sample_rate = sample_rate;
    b.samples = {left, right};
    return b;
  }

  static Bir from_buffer(const AudioBuffer& b) {
    require(b.channels() == 2, "impulse response: expected 2 channels, got ", b.channels());
    Bir ir;
    ir.sample_rate = b.sample_rate;
    ir.left = b.samples[0];
    ir.right = b.samples[1];
    return ir;
  }
};

enum class WavEncoding { Pcm16, Float32 };

// Reads a RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float, 1-2 channels.
// PCM sample s maps to s / 32768.
AudioBuffer wav_read(const std::string& path);

void wav_write(const std::string& path, const AudioBuffer& buf,
               WavEncoding enc = WavEncoding::Float32);

}  // namespace banc

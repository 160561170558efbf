//
//  dsp.hpp — convolution, binaural rendering, STFT and mel analysis.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <complex>
#include <vector>

#include "banc/audio.hpp"

namespace banc::dsp {

// Complex one-sided spectrogram. bins == fft_size / 2 + 1.
struct Spectrogram {
  std::vector<std::vector<std::complex<double>>> frames;  // [frame][bin]
  int fft_size = 0;
  int hop = 0;
  int win_length = 0;

  size_t num_frames() const { return frames.size(); }
  size_t bins() const { return frames.empty() ? 0 : frames[0].size(); }
};

// Log-compressed mel spectrogram plus the filterbank parameters it was
// built with.
struct MelMatrix {
  std::vector<std::vector<double>> frames;  // [frame][mel], log(mel + eps)
  int n_mels = 0;
  double fmin = 0.0;
  double fmax = 0.0;
};

struct StftConfig {
  int fft_size = 2048;
  int hop = 300;  // one frame per speech code frame
  int win_length = 1200;
};

struct MelConfig {
  StftConfig stft;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 -> sample_rate / 2
  double eps = 1e-5;
};

// Triangular mel filterbank over one-sided FFT bins. Rows are stored with
// their nonzero span so application stays O(bins) per frame.
struct MelBank {
  int n_mels = 0;
  int bins = 0;
  std::vector<int> lo;                       // first nonzero bin per row
  std::vector<std::vector<double>> weights;  // per-row weights from lo

  static MelBank build(int fft_size, int sample_rate, int n_mels, double fmin, double fmax);

  double row_sum(int m) const {
    double s = 0.0;
    for (double w : weights[m]) s += w;
    return s;
  }
};

// Full linear convolution truncated to the signal length, keeping the
// output aligned with (and as long as) the input.
std::vector<double> convolve(const std::vector<double>& signal, const std::vector<double>& kernel);
std::vector<double> convolve_direct(const std::vector<double>& signal, const std::vector<double>& kernel);
std::vector<double> convolve_fft(const std::vector<double>& signal, const std::vector<double>& kernel);

// clean (mono) rendered through a two-channel impulse response -> binaural.
AudioBuffer render_binaural(const AudioBuffer& clean, const Bir& bir);

// Sample-wise sum of per-source binaural renders. Summation order is fixed
// by sorting the rendered signals, so the result is independent of the
// order sources are passed in.
AudioBuffer mix_overlapped(const std::vector<std::pair<AudioBuffer, Bir>>& sources);

Spectrogram stft(const std::vector<double>& signal, const StftConfig& cfg);

// Periodic Hann window.
std::vector<double> hann_window(int length);

// |STFT| through the mel filterbank, then log(x + eps).
MelMatrix mel_spectrogram(const std::vector<double>& signal, int sample_rate, const MelConfig& cfg);

}  // namespace banc::dsp

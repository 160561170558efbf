//
//  dsp.cpp
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#include "banc/dsp.hpp"

#include <algorithm>
#include <cmath>

#include "banc/fft.hpp"

namespace banc::dsp {

namespace {
constexpr int kFftKernelThreshold = 64;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }
}  // namespace

std::vector<double> convolve_direct(const std::vector<double>& signal,
                                    const std::vector<double>& kernel) {
  require(!signal.empty() && !kernel.empty(), "convolve: empty input");
  std::vector<double> out(signal.size(), 0.0);
  for (size_t t = 0; t < signal.size(); ++t) {
    const size_t jmax = std::min(t, kernel.size() - 1);
    double acc = 0.0;
    for (size_t j = 0; j <= jmax; ++j) acc += kernel[j] * signal[t - j];
    out[t] = acc;
  }
  return out;
}

std::vector<double> convolve_fft(const std::vector<double>& signal,
                                 const std::vector<double>& kernel) {
  require(!signal.empty() && !kernel.empty(), "convolve: empty input");
  const size_t full = signal.size() + kernel.size() - 1;
  const size_t n = next_pow2(full);
  std::vector<std::complex<double>> a(n, {0.0, 0.0});
  std::vector<std::complex<double>> b(n, {0.0, 0.0});
  for (size_t i = 0; i < signal.size(); ++i) a[i] = {signal[i], 0.0};
  for (size_t i = 0; i < kernel.size(); ++i) b[i] = {kernel[i], 0.0};
  fft_inplace(a, false);
  fft_inplace(b, false);
  for (size_t i = 0; i < n; ++i) a[i] *= b[i];
  fft_inplace(a, true);
  std::vector<double> out(signal.size());
  const double inv = 1.0 / static_cast<double>(n);
  for (size_t i = 0; i < signal.size(); ++i) out[i] = a[i].real() * inv;
  return out;
}

std::vector<double> convolve(const std::vector<double>& signal,
                             const std::vector<double>& kernel) {
  if (kernel.size() > kFftKernelThreshold) return convolve_fft(signal, kernel);
  return convolve_direct(signal, kernel);
}

AudioBuffer render_binaural(const AudioBuffer& clean, const Bir& bir) {
  clean.validate();
  bir.validate();
  require(clean.channels() == 1, "render_binaural: clean input must be mono");
  require(clean.sample_rate == bir.sample_rate, "render_binaural: sample rate mismatch (",
          clean.sample_rate, " vs ", bir.sample_rate, ")");
  AudioBuffer out(2, clean.frames(), clean.sample_rate);
  out.samples[0] = convolve(clean.samples[0], bir.left);
  out.samples[1] = convolve(clean.samples[0], bir.right);
  return out;
}

AudioBuffer mix_overlapped(const std::vector<std::pair<AudioBuffer, Bir>>& sources) {
  require(!sources.empty(), "mix_overlapped: no sources");
  std::vector<AudioBuffer> rendered;
  rendered.reserve(sources.size());
  for (const auto& [clean, bir] : sources) {
    AudioBuffer r = render_binaural(clean, bir);
    if (!rendered.empty()) {
      require(r.frames() == rendered[0].frames(), "mix_overlapped: source lengths differ");
      require(r.sample_rate == rendered[0].sample_rate, "mix_overlapped: sample rates differ");
    }
    rendered.push_back(std::move(r));
  }
  // Lexicographic order of rendered samples fixes the summation order.
  std::sort(rendered.begin(), rendered.end(), [](const AudioBuffer& a, const AudioBuffer& b) {
    for (int c = 0; c < 2; ++c) {
      for (size_t i = 0; i < a.samples[c].size(); ++i) {
        if (a.samples[c][i] != b.samples[c][i]) return a.samples[c][i] < b.samples[c][i];
      }
    }
    return false;
  });
  AudioBuffer out(2, rendered[0].frames(), rendered[0].sample_rate);
  for (const auto& r : rendered) {
    for (int c = 0; c < 2; ++c) {
      for (size_t i = 0; i < r.samples[c].size(); ++i) out.samples[c][i] += r.samples[c][i];
    }
  }
  return out;
}

std::vector<double> hann_window(int length) {
  std::vector<double> w(length);
  for (int i = 0; i < length; ++i) {
    w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * static_cast<double>(i) / length));
  }
  return w;
}

Spectrogram stft(const std::vector<double>& signal, const StftConfig& cfg) {
  require(cfg.hop > 0, "stft: hop must be positive");
  require(is_pow2(static_cast<size_t>(cfg.fft_size)), "stft: fft_size ", cfg.fft_size,
          " is not a power of two");
  require(cfg.win_length > 0 && cfg.win_length <= cfg.fft_size,
          "stft: window length must be in (0, fft_size]");
  require(signal.size() >= static_cast<size_t>(cfg.fft_size),
          "stft: signal shorter than fft_size");

  const std::vector<double> window = hann_window(cfg.win_length);
  const size_t n_frames = (signal.size() + cfg.hop - 1) / cfg.hop;

  Spectrogram spec;
  spec.fft_size = cfg.fft_size;
  spec.hop = cfg.hop;
  spec.win_length = cfg.win_length;
  spec.frames.resize(n_frames);

  std::vector<double> frame(cfg.fft_size);
  for (size_t f = 0; f < n_frames; ++f) {
    std::fill(frame.begin(), frame.end(), 0.0);
    const size_t start = f * cfg.hop;
    for (int i = 0; i < cfg.win_length; ++i) {
      const size_t idx = start + i;
      if (idx < signal.size()) frame[i] = signal[idx] * window[i];
    }
    spec.frames[f] = rfft(frame.data(), frame.size(), cfg.fft_size);
  }
  return spec;
}

MelBank MelBank::build(int fft_size, int sample_rate, int n_mels, double fmin, double fmax) {
  require(n_mels > 0, "mel bank: n_mels must be positive");
  if (fmax <= 0.0) fmax = sample_rate / 2.0;
  require(fmax > fmin && fmax <= sample_rate / 2.0, "mel bank: bad frequency range");

  MelBank bank;
  bank.n_mels = n_mels;
  bank.bins = fft_size / 2 + 1;
  bank.lo.resize(n_mels);
  bank.weights.resize(n_mels);

  const double mel_lo = hz_to_mel(fmin);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (int m = 0; m < n_mels + 2; ++m) {
    edges[m] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * m / (n_mels + 1));
  }

  const double bin_hz = static_cast<double>(sample_rate) / fft_size;
  for (int m = 0; m < n_mels; ++m) {
    const double f_lo = edges[m], f_c = edges[m + 1], f_hi = edges[m + 2];
    int first = -1;
    std::vector<double> row;
    for (int b = 0; b < bank.bins; ++b) {
      const double f = b * bin_hz;
      double w = 0.0;
      if (f > f_lo && f < f_hi) {
        w = f <= f_c ? (f - f_lo) / (f_c - f_lo) : (f_hi - f) / (f_hi - f_c);
      }
      if (w > 0.0) {
        if (first < 0) first = b;
        row.push_back(w);
      } else if (first >= 0) {
        break;
      }
    }
    if (first < 0) {
      // Filter narrower than one bin: fall back to its center bin.
      first = std::min(bank.bins - 1, static_cast<int>(std::lround(f_c / bin_hz)));
      row.push_back(1.0);
    }
    bank.lo[m] = first;
    bank.weights[m] = std::move(row);
  }
  return bank;
}

MelMatrix mel_spectrogram(const std::vector<double>& signal, int sample_rate,
                          const MelConfig& cfg) {
  const Spectrogram spec = stft(signal, cfg.stft);
  const double fmax = cfg.fmax > 0.0 ? cfg.fmax : sample_rate / 2.0;
  const MelBank bank = MelBank::build(cfg.stft.fft_size, sample_rate, cfg.n_mels, cfg.fmin, fmax);

  MelMatrix mel;
  mel.n_mels = cfg.n_mels;
  mel.fmin = cfg.fmin;
  mel.fmax = fmax;
  mel.frames.resize(spec.num_frames(), std::vector<double>(cfg.n_mels, 0.0));
  for (size_t f = 0; f < spec.num_frames(); ++f) {
    for (int m = 0; m < cfg.n_mels; ++m) {
      double acc = 0.0;
      const auto& row = bank.weights[m];
      for (size_t j = 0; j < row.size(); ++j) {
        acc += row[j] * std::abs(spec.frames[f][bank.lo[m] + j]);
      }
      mel.frames[f][m] = std::log(acc + cfg.eps);
    }
  }
  return mel;
}

}  // namespace banc::dsp

//
//  wav.cpp — RIFF/WAVE reader and writer (PCM16 and IEEE float32).
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#include "banc/audio.hpp"

#include <cstring>
#include <fstream>

namespace banc {

namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;

template <typename T>
T read_le(std::istream& in) {
  unsigned char raw[sizeof(T)];
  in.read(reinterpret_cast<char*>(raw), sizeof(T));
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(raw[i]) << (8 * i);
  T out;
  std::memcpy(&out, &v, sizeof(T));
  return out;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  uint64_t v = 0;
  std::memcpy(&v, &value, sizeof(T));
  unsigned char raw[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) raw[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(raw), sizeof(T));
}

struct FmtChunk {
  uint16_t format = 0;
  uint16_t channels = 0;
  uint32_t sample_rate = 0;
  uint16_t bits = 0;
};

}  // namespace

AudioBuffer wav_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "wav_read: cannot open ", path);

  char tag[4];
  in.read(tag, 4);
  require(in.good() && std::memcmp(tag, "RIFF", 4) == 0, "wav_read: not a RIFF file: ", path);
  read_le<uint32_t>(in);  // total size, unused
  in.read(tag, 4);
  require(in.good() && std::memcmp(tag, "WAVE", 4) == 0, "wav_read: not a WAVE file: ", path);

  FmtChunk fmt;
  bool have_fmt = false;
  std::vector<char> data;

  while (in.read(tag, 4)) {
    uint32_t size = read_le<uint32_t>(in);
    require(in.good(), "wav_read: truncated chunk header in ", path);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      require(size >= 16, "wav_read: malformed fmt chunk in ", path);
      fmt.format = read_le<uint16_t>(in);
      fmt.channels = read_le<uint16_t>(in);
      fmt.sample_rate = read_le<uint32_t>(in);
      read_le<uint32_t>(in);  // byte rate
      read_le<uint16_t>(in);  // block align
      fmt.bits = read_le<uint16_t>(in);
      in.ignore(size - 16 + (size & 1));
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data.resize(size);
      in.read(data.data(), size);
      require(in.good(), "wav_read: truncated data chunk in ", path);
      break;
    } else {
      in.ignore(size + (size & 1));
    }
  }
  require(have_fmt, "wav_read: missing fmt chunk in ", path);
  require(!data.empty(), "wav_read: missing data chunk in ", path);
  require(fmt.channels >= 1 && fmt.channels <= 2,
          "wav_read: unsupported channel count ", fmt.channels, " in ", path);

  const bool pcm16 = fmt.format == kFormatPcm && fmt.bits == 16;
  const bool f32 = fmt.format == kFormatFloat && fmt.bits == 32;
  require(pcm16 || f32, "wav_read: unsupported encoding (format ", fmt.format, ", ",
          fmt.bits, " bits) in ", path);

  const size_t bytes_per_sample = fmt.bits / 8;
  const size_t frame_bytes = bytes_per_sample * fmt.channels;
  const size_t frames = data.size() / frame_bytes;

  AudioBuffer buf(fmt.channels, frames, static_cast<int>(fmt.sample_rate));
  const unsigned char* p = reinterpret_cast<const unsigned char*>(data.data());
  for (size_t f = 0; f < frames; ++f) {
    for (int c = 0; c < fmt.channels; ++c) {
      const unsigned char* s = p + (f * fmt.channels + c) * bytes_per_sample;
      if (pcm16) {
        int16_t v = static_cast<int16_t>(s[0] | (s[1] << 8));
        buf.samples[c][f] = static_cast<double>(v) / 32768.0;
      } else {
        uint32_t bits = s[0] | (s[1] << 8) | (s[2] << 16) |
                        (static_cast<uint32_t>(s[3]) << 24);
        float v;
        std::memcpy(&v, &bits, 4);
        buf.samples[c][f] = static_cast<double>(v);
      }
    }
  }
  return buf;
}

void wav_write(const std::string& path, const AudioBuffer& buf, WavEncoding enc) {
  buf.validate();
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "wav_write: cannot open ", path, " for writing");

  const uint16_t channels = static_cast<uint16_t>(buf.channels());
  const size_t frames = buf.frames();
  const uint16_t bits = enc == WavEncoding::Pcm16 ? 16 : 32;
  const uint16_t block_align = channels * bits / 8;
  const uint32_t data_size = static_cast<uint32_t>(frames * block_align);

  out.write("RIFF", 4);
  write_le<uint32_t>(out, 36 + data_size);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<uint32_t>(out, 16);
  write_le<uint16_t>(out, enc == WavEncoding::Pcm16 ? kFormatPcm : kFormatFloat);
  write_le<uint16_t>(out, channels);
  write_le<uint32_t>(out, static_cast<uint32_t>(buf.sample_rate));
  write_le<uint32_t>(out, static_cast<uint32_t>(buf.sample_rate) * block_align);
  write_le<uint16_t>(out, block_align);
  write_le<uint16_t>(out, bits);
  out.write("data", 4);
  write_le<uint32_t>(out, data_size);

  bool clipped = false;
  for (size_t f = 0; f < frames; ++f) {
    for (int c = 0; c < channels; ++c) {
      double v = buf.samples[c][f];
      if (enc == WavEncoding::Pcm16) {
        double scaled = v * 32768.0;
        if (scaled > 32767.0) {
          scaled = 32767.0;
          clipped = true;
        } else if (scaled < -32768.0) {
          scaled = -32768.0;
          clipped = true;
        }
        write_le<int16_t>(out, static_cast<int16_t>(std::lrint(scaled)));
      } else {
        write_le<float>(out, static_cast<float>(v));
      }
    }
  }
  require(out.good(), "wav_write: I/O failure writing ", path);
  if (clipped) log_warn("wav_write: clipped samples while writing ", path);
}

}  // namespace banc

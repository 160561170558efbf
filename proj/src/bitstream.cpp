//
//  bitstream.cpp — big-endian bit packing with per-chunk byte alignment.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#include "banc/bitstream.hpp"

#include <cstring>
#include <fstream>

namespace banc::bits {

namespace {

constexpr char kMagic[4] = {'B', 'A', 'N', 'C'};
constexpr uint16_t kVersion = 1;
constexpr size_t kHeaderBytes = 4 + 2 + 4 + 1 + 1 + 2 + 2 + 2 + 4 + 4;

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<uint8_t>& out) : out_(out) {}
  void u8(uint8_t v) { out_.push_back(v); }
  void u16(uint16_t v) {
    out_.push_back(v & 0xff);
    out_.push_back(v >> 8);
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back((v >> (8 * i)) & 0xff);
  }

 private:
  std::vector<uint8_t>& out_;
};

class ByteReader {
 public:
  ByteReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
  uint8_t u8() {
    require(pos_ + 1 <= n_, "bitstream: truncated header");
    return p_[pos_++];
  }
  uint16_t u16() {
    require(pos_ + 2 <= n_, "bitstream: truncated header");
    uint16_t v = p_[pos_] | (p_[pos_ + 1] << 8);
    pos_ += 2;
    return v;
  }
  uint32_t u32() {
    require(pos_ + 4 <= n_, "bitstream: truncated header");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  size_t pos() const { return pos_; }

 private:
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

// MSB-first bit packing.
class BitWriter {
 public:
  explicit BitWriter(std::vector<uint8_t>& out) : out_(out) {}
  void put(uint32_t value, int bits) {
    for (int b = bits - 1; b >= 0; --b) {
      acc_ = (acc_ << 1) | ((value >> b) & 1u);
      if (++filled_ == 8) {
        out_.push_back(static_cast<uint8_t>(acc_));
        acc_ = 0;
        filled_ = 0;
      }
    }
  }
  void align() {
    if (filled_ > 0) {
      out_.push_back(static_cast<uint8_t>(acc_ << (8 - filled_)));
      acc_ = 0;
      filled_ = 0;
    }
  }

 private:
  std::vector<uint8_t>& out_;
  uint32_t acc_ = 0;
  int filled_ = 0;
};

class BitReader {
 public:
  BitReader(const uint8_t* p, size_t nbytes) : p_(p), nbits_(nbytes * 8) {}
  uint32_t get(int bits) {
    uint32_t v = 0;
    for (int b = 0; b < bits; ++b) {
      require(pos_ < nbits_, "bitstream: truncated payload (needed bit ", pos_ + 1, " of ",
              nbits_, ")");
      const uint8_t byte = p_[pos_ >> 3];
      v = (v << 1) | ((byte >> (7 - (pos_ & 7))) & 1u);
      ++pos_;
    }
    return v;
  }
  void align() { pos_ = (pos_ + 7) & ~size_t(7); }

 private:
  const uint8_t* p_;
  size_t nbits_;
  size_t pos_ = 0;
};

}  // namespace

void StreamHeader::validate() const {
  require(version == kVersion, "bitstream: unsupported version ", version);
  require(codebook_size >= 2 && (codebook_size & (codebook_size - 1)) == 0,
          "bitstream: codebook_size must be a power of two");
  require(speakers == 1 || speakers == 2, "bitstream: speakers must be 1 or 2");
  require(speech_factor > 0 && ir_factor > 0, "bitstream: zero downsample factor");
  require(chunk_samples % speech_factor == 0, "bitstream: chunk not divisible by speech factor");
  require(chunk_samples % ir_factor == 0, "bitstream: chunk not divisible by IR factor");
  require(total_samples > 0, "bitstream: empty stream");
}

std::vector<uint8_t> pack(const StreamHeader& header, const std::vector<ChunkCodes>& chunks) {
  header.validate();
  require(static_cast<int64_t>(chunks.size()) == header.num_chunks(),
          "bitstream: expected ", header.num_chunks(), " chunks, got ", chunks.size());

  std::vector<uint8_t> out;
  out.reserve(kHeaderBytes + chunks.size() * header.payload_bytes_per_chunk());
  ByteWriter bw(out);
  out.insert(out.end(), kMagic, kMagic + 4);
  bw.u16(header.version);
  bw.u32(header.sample_rate);
  bw.u8(header.speakers);
  bw.u8(header.num_codebooks);
  bw.u16(header.codebook_size);
  bw.u16(header.speech_factor);
  bw.u16(header.ir_factor);
  bw.u32(header.chunk_samples);
  bw.u32(header.total_samples);

  const int bits = header.bits_per_index();
  const size_t ns = header.speech_frames_per_chunk() * header.num_codebooks;
  const size_t ni = header.ir_frames_per_chunk() * header.num_codebooks;
  for (const auto& chunk : chunks) {
    require(chunk.speech.size() == ns, "bitstream: chunk has ", chunk.speech.size(),
            " speech indices, expected ", ns);
    require(chunk.ir.size() == ni, "bitstream: chunk has ", chunk.ir.size(),
            " IR indices, expected ", ni);
    BitWriter writer(out);
    for (uint16_t v : chunk.speech) {
      require(v < header.codebook_size, "bitstream: speech index ", v, " overflows codebook");
      writer.put(v, bits);
    }
    for (uint16_t v : chunk.ir) {
      require(v < header.codebook_size, "bitstream: IR index ", v, " overflows codebook");
      writer.put(v, bits);
    }
    writer.align();
  }
  return out;
}

std::pair<StreamHeader, std::vector<ChunkCodes>> unpack(const std::vector<uint8_t>& bytes) {
  require(bytes.size() >= kHeaderBytes, "bitstream: shorter than a header");
  require(std::memcmp(bytes.data(), kMagic, 4) == 0, "bitstream: bad magic");
  ByteReader br(bytes.data() + 4, bytes.size() - 4);
  StreamHeader h;
  h.version = br.u16();
  require(h.version == kVersion, "bitstream: unsupported version ", h.version);
  h.sample_rate = br.u32();
  h.speakers = br.u8();
  h.num_codebooks = br.u8();
  h.codebook_size = br.u16();
  h.speech_factor = br.u16();
  h.ir_factor = br.u16();
  h.chunk_samples = br.u32();
  h.total_samples = br.u32();
  h.validate();

  const size_t payload = bytes.size() - kHeaderBytes;
  const size_t expected = h.num_chunks() * h.payload_bytes_per_chunk();
  require(payload == expected, "bitstream: payload is ", payload, " bytes, expected ", expected);

  const int bits = h.bits_per_index();
  std::vector<ChunkCodes> chunks(h.num_chunks());
  const uint8_t* p = bytes.data() + kHeaderBytes;
  for (auto& chunk : chunks) {
    BitReader reader(p, h.payload_bytes_per_chunk());
    chunk.speech.resize(h.speech_frames_per_chunk() * h.num_codebooks);
    chunk.ir.resize(h.ir_frames_per_chunk() * h.num_codebooks);
    for (auto& v : chunk.speech) {
      const uint32_t raw = reader.get(bits);
      require(raw < h.codebook_size, "bitstream: decoded index out of range");
      v = static_cast<uint16_t>(raw);
    }
    for (auto& v : chunk.ir) {
      const uint32_t raw = reader.get(bits);
      require(raw < h.codebook_size, "bitstream: decoded index out of range");
      v = static_cast<uint16_t>(raw);
    }
    p += h.payload_bytes_per_chunk();
  }
  return {h, std::move(chunks)};
}

void write_stream(const std::string& path, const StreamHeader& header,
                  const std::vector<ChunkCodes>& chunks) {
  auto bytes = pack(header, chunks);
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "bitstream: cannot open ", path, " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  require(out.good(), "bitstream: I/O failure writing ", path);
}

std::pair<StreamHeader, std::vector<ChunkCodes>> read_stream(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "bitstream: cannot open ", path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return unpack(bytes);
}

StreamHeader read_header(const std::string& path) { return read_stream(path).first; }

double bandwidth_bps(const StreamHeader& header) {
  const double bpf = header.bits_per_frame();
  return bpf * header.sample_rate / header.speech_factor +
         bpf * header.sample_rate / header.ir_factor;
}

double comparator_bps(const StreamHeader& header) {
  return 2.0 * header.bits_per_frame() * header.sample_rate / header.speech_factor;
}

CompressionReport compression_report(const StreamHeader& header, int bits_per_sample_raw) {
  CompressionReport r;
  r.coded_bps = bandwidth_bps(header);
  r.comparator = comparator_bps(header);
  r.savings_fraction = 1.0 - r.coded_bps / r.comparator;
  r.raw_bps = 2.0 * header.sample_rate * bits_per_sample_raw;
  r.bit_ratio = r.raw_bps / r.coded_bps;
  const double speech_stream_bps =
      static_cast<double>(header.bits_per_frame()) * header.sample_rate / header.speech_factor;
  r.mono_bit_ratio = (static_cast<double>(header.sample_rate) * bits_per_sample_raw) /
                     speech_stream_bps;
  r.stride_mean_ratio = (header.speech_factor + header.ir_factor) / 2.0;
  return r;
}

}  // namespace banc::bits

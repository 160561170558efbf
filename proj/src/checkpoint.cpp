//
//  checkpoint.cpp
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#include "banc/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "banc/common.hpp"

namespace banc::train {

namespace {
constexpr char kMagic[8] = {'B', 'A', 'N', 'C', 'C', 'K', 'P', 'T'};
constexpr uint16_t kVersion = 1;

template <typename T>
void put_le(std::ofstream& out, T v) {
  unsigned char raw[sizeof(T)];
  uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof(T));
  for (size_t i = 0; i < sizeof(T); ++i) raw[i] = (bits >> (8 * i)) & 0xff;
  out.write(reinterpret_cast<const char*>(raw), sizeof(T));
}

template <typename T>
T get_le(std::ifstream& in, const std::string& path) {
  unsigned char raw[sizeof(T)];
  in.read(reinterpret_cast<char*>(raw), sizeof(T));
  require(in.good(), "checkpoint: truncated file ", path);
  uint64_t bits = 0;
  for (size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<uint64_t>(raw[i]) << (8 * i);
  T v;
  std::memcpy(&v, &bits, sizeof(T));
  return v;
}
}  // namespace

void write_tensors(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "checkpoint: cannot open ", path, " for writing");
  out.write(kMagic, 8);
  put_le<uint16_t>(out, kVersion);
  put_le<uint32_t>(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    require(t.name.size() < 65536, "checkpoint: tensor name too long");
    int64_t numel = 1;
    for (int64_t d : t.shape) numel *= d;
    require(numel == static_cast<int64_t>(t.data.size()), "checkpoint: ", t.name,
            " has inconsistent shape");
    put_le<uint16_t>(out, static_cast<uint16_t>(t.name.size()));
    out.write(t.name.data(), t.name.size());
    put_le<uint8_t>(out, static_cast<uint8_t>(t.shape.size()));
    for (int64_t d : t.shape) put_le<uint32_t>(out, static_cast<uint32_t>(d));
    for (float v : t.data) put_le<float>(out, v);
  }
  require(out.good(), "checkpoint: I/O failure writing ", path);
}

std::vector<NamedTensor> read_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint: cannot open ", path);
  char magic[8];
  in.read(magic, 8);
  require(in.good() && std::memcmp(magic, kMagic, 8) == 0,
          "checkpoint: bad magic at offset 0 in ", path);
  const uint16_t version = get_le<uint16_t>(in, path);
  require(version == kVersion, "checkpoint: unsupported version ", version, " in ", path);
  const uint32_t count = get_le<uint32_t>(in, path);
  std::vector<NamedTensor> tensors(count);
  for (auto& t : tensors) {
    const uint16_t name_len = get_le<uint16_t>(in, path);
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    require(in.good(), "checkpoint: truncated file ", path);
    const uint8_t rank = get_le<uint8_t>(in, path);
    int64_t numel = 1;
    t.shape.resize(rank);
    for (auto& d : t.shape) {
      d = get_le<uint32_t>(in, path);
      numel *= d;
    }
    t.data.resize(numel);
    for (auto& v : t.data) v = get_le<float>(in, path);
  }
  return tensors;
}

}  // namespace banc::train

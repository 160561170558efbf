//
//  test_bitstream.cpp
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "banc/bitstream.hpp"
#include "banc/rng.hpp"

using namespace banc;
using bits::ChunkCodes;
using bits::StreamHeader;

namespace {

StreamHeader reference_header() { return StreamHeader{}; }

ChunkCodes random_chunk(const StreamHeader& h, Rng& rng) {
  ChunkCodes c;
  c.speech.resize(h.speech_frames_per_chunk() * h.num_codebooks);
  c.ir.resize(h.ir_frames_per_chunk() * h.num_codebooks);
  for (auto& v : c.speech) v = static_cast<uint16_t>(rng.below(h.codebook_size));
  for (auto& v : c.ir) v = static_cast<uint16_t>(rng.below(h.codebook_size));
  return c;
}

}  // namespace

TEST_CASE("header: reference geometry and bit budget") {
  StreamHeader h = reference_header();
  h.validate();
  CHECK(h.bits_per_index() == 10);
  CHECK(h.bits_per_frame() == 80);
  CHECK(h.speech_frames_per_chunk() == 320);
  CHECK(h.ir_frames_per_chunk() == 16);
  CHECK(h.payload_bits_per_chunk() == 26880);
  CHECK(h.payload_bytes_per_chunk() == 3360);
}

TEST_CASE("pack: one reference chunk yields exactly 3360 payload bytes") {
  StreamHeader h = reference_header();
  Rng rng(1);
  auto bytes = bits::pack(h, {random_chunk(h, rng)});
  const size_t header_bytes = 26;
  CHECK(bytes.size() == header_bytes + 3360);
}

TEST_CASE("pack: all-zero indices produce an all-zero payload") {
  StreamHeader h = reference_header();
  ChunkCodes zero;
  zero.speech.assign(h.speech_frames_per_chunk() * h.num_codebooks, 0);
  zero.ir.assign(h.ir_frames_per_chunk() * h.num_codebooks, 0);
  auto bytes = bits::pack(h, {zero});
  for (size_t i = 26; i < bytes.size(); ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("pack/unpack: bijection over 1000 random seeds") {
  // Smaller geometry keeps a thousand round trips quick; the bit widths
  // (10-bit indices, byte-aligned chunks) match the reference layout.
  StreamHeader h;
  h.sample_rate = 6000;
  h.chunk_samples = 12000;
  h.total_samples = 12000;
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    auto chunk = random_chunk(h, rng);
    auto bytes = bits::pack(h, {chunk});
    auto [h2, chunks2] = bits::unpack(bytes);
    REQUIRE(chunks2.size() == 1);
    CHECK(h2.sample_rate == h.sample_rate);
    CHECK(h2.total_samples == h.total_samples);
    CHECK(chunks2[0].speech == chunk.speech);
    CHECK(chunks2[0].ir == chunk.ir);
  }
}

TEST_CASE("pack: multi-chunk streams with a padded tail") {
  StreamHeader h;
  h.sample_rate = 6000;
  h.chunk_samples = 12000;
  h.total_samples = 30000;  // 2.5 chunks -> 3 chunks on the wire
  CHECK(h.num_chunks() == 3);
  Rng rng(3);
  std::vector<ChunkCodes> chunks{random_chunk(h, rng), random_chunk(h, rng),
                                 random_chunk(h, rng)};
  auto bytes = bits::pack(h, chunks);
  auto [h2, back] = bits::unpack(bytes);
  CHECK(h2.total_samples == 30000u);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back[i].speech == chunks[i].speech);
    CHECK(back[i].ir == chunks[i].ir);
  }
}

TEST_CASE("pack: index overflow rejected") {
  StreamHeader h;
  h.sample_rate = 6000;
  h.chunk_samples = 12000;
  h.total_samples = 12000;
  Rng rng(4);
  auto chunk = random_chunk(h, rng);
  chunk.speech[5] = h.codebook_size;  // one past the end
  CHECK_THROWS_WITH_AS(bits::pack(h, {chunk}), doctest::Contains("overflow"), Error);
}

TEST_CASE("unpack: truncation, bad magic and bad version are reported") {
  StreamHeader h;
  h.sample_rate = 6000;
  h.chunk_samples = 12000;
  h.total_samples = 12000;
  Rng rng(5);
  auto bytes = bits::pack(h, {random_chunk(h, rng)});

  auto truncated = bytes;
  truncated.resize(bytes.size() - 10);
  CHECK_THROWS_WITH_AS(bits::unpack(truncated), doctest::Contains("expected"), Error);

  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_WITH_AS(bits::unpack(magic), doctest::Contains("magic"), Error);

  auto version = bytes;
  version[4] = 0xe7;  // 999 little-endian low byte
  version[5] = 0x03;
  CHECK_THROWS_WITH_AS(bits::unpack(version), doctest::Contains("version"), Error);
}

TEST_CASE("bandwidth: reference stream and comparator") {
  StreamHeader h = reference_header();
  CHECK(bits::bandwidth_bps(h) == 13440.0);
  CHECK(bits::comparator_bps(h) == 25600.0);
  auto report = bits::compression_report(h);
  CHECK(report.savings_fraction == doctest::Approx(0.475));
  CHECK(report.raw_bps == 1536000.0);
  CHECK(report.bit_ratio == doctest::Approx(1536000.0 / 13440.0));
  CHECK(report.mono_bit_ratio == doctest::Approx(60.0));
  CHECK(report.stride_mean_ratio == 3150.0);
}

TEST_CASE("bandwidth: invariant to the chunk size") {
  StreamHeader h = reference_header();
  const double bw = bits::bandwidth_bps(h);
  for (uint32_t chunk : {48000u, 96000u, 192000u, 480000u}) {
    StreamHeader h2 = h;
    h2.chunk_samples = chunk;
    h2.total_samples = chunk;
    CHECK(bits::bandwidth_bps(h2) == bw);
  }
}

TEST_CASE("file io: round trip through disk") {
  StreamHeader h;
  h.sample_rate = 6000;
  h.chunk_samples = 12000;
  h.total_samples = 18000;
  Rng rng(6);
  std::vector<ChunkCodes> chunks{random_chunk(h, rng), random_chunk(h, rng)};
  const std::string path = "/tmp/banc_test_stream.banc";
  bits::write_stream(path, h, chunks);
  auto [h2, back] = bits::read_stream(path);
  CHECK(h2.total_samples == 18000u);
  CHECK(back[1].speech == chunks[1].speech);
  auto header_only = bits::read_header(path);
  CHECK(header_only.chunk_samples == 12000u);
  std::remove(path.c_str());
}

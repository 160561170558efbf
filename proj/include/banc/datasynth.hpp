//
//  datasynth.hpp — synthetic dataset factory: parametric binaural impulse
//  responses, clean-signal surrogates, and rendered mixtures with manifests.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <map>
#include <string>
#include <vector>

#include "banc/audio.hpp"
#include "banc/rng.hpp"

namespace banc::synth {

// Parameters of one generated impulse response. Delays are in samples at
// the target rate; the level offset tilts left against right.
struct BirSpec {
  double t60 = 0.5;             // seconds, 0.1 .. 1.0
  int delay_left = 0;           // direct-path arrival, samples
  int delay_right = 0;
  double level_offset_db = 0.0; // -6 .. +6
  int reflection_count = 6;     // sparse early reflections in 5..50 ms
  uint64_t seed = 0;

  void validate() const;
  int earliest_arrival() const { return std::min(delay_left, delay_right); }
};

// One-second impulse response: direct impulses at the per-channel delays,
// sparse early reflections, then a noise tail with an exponential envelope
// hitting -60 dB at t60. Peak-normalized across both channels.
Bir synth_bir(const BirSpec& spec, int sample_rate);

enum class CleanKind { ToneComplex, FilteredNoise, Chirp };

// Bandlimited (< 0.45 * sample_rate) source signal with peak <= 0.9.
AudioBuffer synth_clean(CleanKind kind, double seconds, int sample_rate, uint64_t seed);

struct DatasetProfile {
  std::string name;
  int64_t train = 0;
  int64_t valid = 0;
  int64_t test = 0;
};

DatasetProfile desk_profile();       // 80 / 10 / 10
DatasetProfile reference_profile();  // 33975 / 750 / 752

struct ItemRecord {
  std::string id;
  std::string split;
  std::string mix;                  // paths relative to the dataset root
  std::vector<std::string> cleans;
  std::vector<std::string> birs;
  std::vector<BirSpec> specs;
};

struct DatasetManifest {
  std::string profile;
  uint64_t seed = 0;
  int speakers = 1;
  int sample_rate = 0;
  double chunk_seconds = 2.0;
  std::map<std::string, int64_t> counts;
  std::vector<ItemRecord> items;
};

struct BuildOptions {
  DatasetProfile profile = desk_profile();
  int sample_rate = 6000;
  double chunk_seconds = 2.0;
  int speakers = 1;
  uint64_t seed = 1;
  std::string clean_dir;  // empty -> synthetic sources
};

// Renders every item (mixture, per-speaker cleans and impulse responses),
// writes float32 WAVs under out_dir/{train,valid,test}/<id>/ and the
// manifest to out_dir/manifest.jsonl.
//
// Components are rounded to float32 before the mixture is rendered, so
// re-rendering from the stored files reproduces the stored mixture exactly
// in storage precision.
DatasetManifest build_dataset(const BuildOptions& options, const std::string& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

}  // namespace banc::synth

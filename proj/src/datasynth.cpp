//
//  datasynth.cpp
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#include "banc/datasynth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "banc/dsp.hpp"
#include "banc/fft.hpp"

namespace banc::synth {

namespace fs = std::filesystem;
using nlohmann::json;

void BirSpec::validate() const {
  require(t60 >= 0.1 && t60 <= 1.0, "bir spec: t60 ", t60, " outside [0.1, 1.0]");
  require(delay_left >= 0 && delay_right >= 0, "bir spec: negative delay");
  require(level_offset_db >= -6.0 && level_offset_db <= 6.0, "bir spec: level offset ",
          level_offset_db, " outside [-6, 6]");
  require(reflection_count >= 0, "bir spec: negative reflection count");
}

Bir synth_bir(const BirSpec& spec, int sample_rate) {
  spec.validate();
  require(sample_rate > 0, "synth_bir: bad sample rate");
  const size_t len = static_cast<size_t>(sample_rate);  // one second
  Bir bir(len, sample_rate);
  Rng rng(spec.seed);

  const double gains[2] = {std::pow(10.0, spec.level_offset_db / 40.0),
                           std::pow(10.0, -spec.level_offset_db / 40.0)};
  const int delays[2] = {spec.delay_left, spec.delay_right};
  const size_t tail_start = static_cast<size_t>(0.005 * sample_rate);

  for (int c = 0; c < 2; ++c) {
    std::vector<double>& h = c == 0 ? bir.left : bir.right;
    require(static_cast<size_t>(delays[c]) < len, "synth_bir: delay beyond one second");
    h[delays[c]] = gains[c];

    // Sparse early reflections, 5..50 ms after the direct sound.
    for (int r = 0; r < spec.reflection_count; ++r) {
      const double when = rng.uniform(0.005, 0.05);
      const size_t idx = std::min(len - 1, delays[c] + static_cast<size_t>(when * sample_rate));
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      h[idx] += sign * gains[c] * rng.uniform(0.1, 0.5) * std::exp(-when / 0.02);
    }

    // Diffuse tail: white noise under an exponential envelope that reaches
    // -60 dB at t60, scaled so the tail carries about the direct energy.
    double env_energy = 0.0;
    for (size_t t = tail_start; t < len; ++t) {
      const double e = std::exp(-6.9078 * (static_cast<double>(t) / sample_rate) / spec.t60);
      env_energy += e * e;
    }
    const double sigma = env_energy > 0.0 ? gains[c] / std::sqrt(env_energy) : 0.0;
    for (size_t t = tail_start; t < len; ++t) {
      const double e = std::exp(-6.9078 * (static_cast<double>(t) / sample_rate) / spec.t60);
      h[t] += sigma * e * rng.normal();
    }
  }

  double peak = 0.0;
  for (const auto* h : {&bir.left, &bir.right}) {
    for (double v : *h) peak = std::max(peak, std::abs(v));
  }
  require(peak > 0.0, "synth_bir: degenerate response");
  for (auto* h : {&bir.left, &bir.right}) {
    for (double& v : *h) v /= peak;
  }
  return bir;
}

AudioBuffer synth_clean(CleanKind kind, double seconds, int sample_rate, uint64_t seed) {
  require(seconds > 0.0, "synth_clean: duration must be positive");
  require(sample_rate > 0, "synth_clean: bad sample rate");
  const size_t n = static_cast<size_t>(seconds * sample_rate + 0.5);
  require(n > 0, "synth_clean: duration must be positive");
  AudioBuffer buf(1, n, sample_rate);
  std::vector<double>& x = buf.samples[0];
  Rng rng(seed);
  const double band_limit = 0.45 * sample_rate;

  switch (kind) {
    case CleanKind::ToneComplex: {
      const double f0 = rng.uniform(0.004, 0.012) * sample_rate;
      double amp = 1.0;
      for (int h = 1; h * f0 < band_limit && h <= 24; ++h) {
        const double phase = rng.uniform(0.0, 2.0 * M_PI);
        const double a = amp * rng.uniform(0.5, 1.0);
        for (size_t t = 0; t < n; ++t) {
          x[t] += a * std::sin(2.0 * M_PI * h * f0 * t / sample_rate + phase);
        }
        amp *= 0.8;
      }
      break;
    }
    case CleanKind::FilteredNoise: {
      const size_t m = next_pow2(n);
      std::vector<std::complex<double>> spec(m, {0.0, 0.0});
      for (size_t t = 0; t < m; ++t) spec[t] = {rng.normal(), 0.0};
      fft_inplace(spec, false);
      const size_t cutoff = static_cast<size_t>(band_limit / sample_rate * m);
      for (size_t k = 0; k < m; ++k) {
        const size_t mirrored = k <= m / 2 ? k : m - k;
        if (mirrored >= cutoff) spec[k] = {0.0, 0.0};
      }
      fft_inplace(spec, true);
      for (size_t t = 0; t < n; ++t) x[t] = spec[t].real() / static_cast<double>(m);
      break;
    }
    case CleanKind::Chirp: {
      const double f_lo = 0.02 * sample_rate;
      const double f_hi = 0.40 * sample_rate;
      for (size_t t = 0; t < n; ++t) {
        const double tt = static_cast<double>(t) / sample_rate;
        const double phase = 2.0 * M_PI * (f_lo * tt + 0.5 * (f_hi - f_lo) * tt * tt / seconds);
        x[t] = std::sin(phase);
      }
      break;
    }
  }

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : x) v *= 0.9 / peak;
  }
  return buf;
}

DatasetProfile desk_profile() { return {"desk", 80, 10, 10}; }
DatasetProfile reference_profile() { return {"reference", 33975, 750, 752}; }

namespace {

// Rounds a buffer through float32, the storage precision of the dataset.
void quantize_f32(AudioBuffer& buf) {
  for (auto& ch : buf.samples) {
    for (double& v : ch) v = static_cast<float>(v);
  }
}

void quantize_f32(Bir& bir) {
  for (auto* ch : {&bir.left, &bir.right}) {
    for (double& v : *ch) v = static_cast<float>(v);
  }
}

double rms(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return std::sqrt(e / x.size());
}

json spec_to_json(const BirSpec& s) {
  return json{{"t60", s.t60},
              {"delay_left", s.delay_left},
              {"delay_right", s.delay_right},
              {"level_offset_db", s.level_offset_db},
              {"reflection_count", s.reflection_count},
              {"seed", s.seed}};
}

BirSpec spec_from_json(const json& j) {
  BirSpec s;
  s.t60 = j.at("t60");
  s.delay_left = j.at("delay_left");
  s.delay_right = j.at("delay_right");
  s.level_offset_db = j.at("level_offset_db");
  s.reflection_count = j.at("reflection_count");
  s.seed = j.at("seed");
  return s;
}

std::vector<std::string> list_wavs(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") {
      files.push_back(entry.path().string());
    }
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), "build_dataset: no .wav files in ", dir);
  return files;
}

}  // namespace

DatasetManifest build_dataset(const BuildOptions& options, const std::string& out_dir) {
  require(options.speakers == 1 || options.speakers == 2,
          "build_dataset: speakers must be 1 or 2");
  require(options.profile.train > 0, "build_dataset: empty training split");
  const int rate = options.sample_rate;
  const size_t chunk = static_cast<size_t>(options.chunk_seconds * rate + 0.5);

  std::vector<std::string> source_files;
  if (!options.clean_dir.empty()) source_files = list_wavs(options.clean_dir);

  // ITD range scales with the rate (40 samples at the 48 kHz reference).
  const int max_delay = std::max(1, static_cast<int>(40.0 * rate / 48000.0 + 0.5));

  DatasetManifest manifest;
  manifest.profile = options.profile.name;
  manifest.seed = options.seed;
  manifest.speakers = options.speakers;
  manifest.sample_rate = rate;
  manifest.chunk_seconds = options.chunk_seconds;
  manifest.counts = {{"train", options.profile.train},
                     {"valid", options.profile.valid},
                     {"test", options.profile.test}};

  struct SplitPlan {
    const char* name;
    int64_t count;
  };
  const SplitPlan plan[3] = {{"train", options.profile.train},
                             {"valid", options.profile.valid},
                             {"test", options.profile.test}};

  int64_t item_index = 0;
  for (const auto& split : plan) {
    for (int64_t k = 0; k < split.count; ++k, ++item_index) {
      Rng rng = rng_for(options.seed, 0xda7a, item_index);
      ItemRecord rec;
      char idbuf[32];
      std::snprintf(idbuf, sizeof idbuf, "item_%06lld", static_cast<long long>(item_index));
      rec.id = idbuf;
      rec.split = split.name;

      // Per-speaker sources and impulse responses.
      std::vector<AudioBuffer> cleans;
      std::vector<Bir> birs;
      for (int s = 0; s < options.speakers; ++s) {
        BirSpec spec;
        spec.t60 = rng.uniform(0.15, 0.9);
        const bool left_first = rng.uniform() < 0.5;
        const int delay = static_cast<int>(rng.below(max_delay + 1));
        spec.delay_left = left_first ? 0 : delay;
        spec.delay_right = left_first ? delay : 0;
        spec.level_offset_db = rng.uniform(-6.0, 6.0);
        spec.reflection_count = 3 + static_cast<int>(rng.below(6));
        spec.seed = rng.next_u64();
        rec.specs.push_back(spec);

        AudioBuffer clean;
        if (source_files.empty()) {
          const CleanKind kinds[3] = {CleanKind::ToneComplex, CleanKind::FilteredNoise,
                                      CleanKind::Chirp};
          clean = synth_clean(kinds[(item_index + s) % 3], options.chunk_seconds, rate,
                              rng.next_u64());
        } else {
          const auto& path = source_files[rng.below(source_files.size())];
          clean = wav_read(path);
          require(clean.sample_rate == rate, "build_dataset: ", path, " has rate ",
                  clean.sample_rate, ", expected ", rate, " (resampling unsupported)");
          clean.samples.resize(1);  // first channel only
          clean.samples[0].resize(chunk, 0.0);
        }
        cleans.push_back(std::move(clean));
        birs.push_back(synth_bir(spec, rate));
      }

      // Speaker 1 is the earlier direct-path arrival.
      if (options.speakers == 2 &&
          rec.specs[0].earliest_arrival() > rec.specs[1].earliest_arrival()) {
        std::swap(rec.specs[0], rec.specs[1]);
        std::swap(cleans[0], cleans[1]);
        std::swap(birs[0], birs[1]);
      }
      // Level-match the second source to the first by RMS.
      if (options.speakers == 2) {
        const double r0 = rms(cleans[0].samples[0]);
        const double r1 = rms(cleans[1].samples[0]);
        if (r1 > 0.0) {
          const double g = r0 / r1;
          for (double& v : cleans[1].samples[0]) v *= g;
        }
      }

      // Round components to storage precision, then render the mixture from
      // the rounded values.
      for (auto& c : cleans) quantize_f32(c);
      for (auto& b : birs) quantize_f32(b);
      std::vector<std::pair<AudioBuffer, Bir>> sources;
      for (int s = 0; s < options.speakers; ++s) sources.emplace_back(cleans[s], birs[s]);
      AudioBuffer mix = dsp::mix_overlapped(sources);
      quantize_f32(mix);

      const fs::path dir = fs::path(out_dir) / split.name / rec.id;
      fs::create_directories(dir);
      rec.mix = (fs::path(split.name) / rec.id / "mix.wav").string();
      wav_write((dir / "mix.wav").string(), mix);
      for (int s = 0; s < options.speakers; ++s) {
        const std::string cname = "clean_" + std::to_string(s + 1) + ".wav";
        const std::string bname = "bir_" + std::to_string(s + 1) + ".wav";
        rec.cleans.push_back((fs::path(split.name) / rec.id / cname).string());
        rec.birs.push_back((fs::path(split.name) / rec.id / bname).string());
        wav_write((dir / cname).string(), cleans[s]);
        wav_write((dir / bname).string(), birs[s].to_buffer());
      }
      manifest.items.push_back(std::move(rec));
    }
  }

  save_manifest(manifest, (fs::path(out_dir) / "manifest.jsonl").string());
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "manifest: cannot open ", path, " for writing");
  json header{{"profile", manifest.profile},
              {"seed", manifest.seed},
              {"speakers", manifest.speakers},
              {"sample_rate", manifest.sample_rate},
              {"chunk_seconds", manifest.chunk_seconds},
              {"counts", manifest.counts}};
  out << header.dump() << "\n";
  for (const auto& item : manifest.items) {
    json j{{"id", item.id}, {"split", item.split}, {"mix", item.mix},
           {"cleans", item.cleans}, {"birs", item.birs}};
    j["specs"] = json::array();
    for (const auto& s : item.specs) j["specs"].push_back(spec_to_json(s));
    out << j.dump() << "\n";
  }
  require(out.good(), "manifest: I/O failure writing ", path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "manifest: cannot open ", path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "manifest: empty file ", path);
  json header = json::parse(line);
  DatasetManifest manifest;
  manifest.profile = header.at("profile");
  manifest.seed = header.at("seed");
  manifest.speakers = header.at("speakers");
  manifest.sample_rate = header.at("sample_rate");
  manifest.chunk_seconds = header.at("chunk_seconds");
  for (auto it = header.at("counts").begin(); it != header.at("counts").end(); ++it) {
    manifest.counts[it.key()] = it.value();
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    ItemRecord rec;
    rec.id = j.at("id");
    rec.split = j.at("split");
    rec.mix = j.at("mix");
    rec.cleans = j.at("cleans").get<std::vector<std::string>>();
    rec.birs = j.at("birs").get<std::vector<std::string>>();
    for (const auto& s : j.at("specs")) rec.specs.push_back(spec_from_json(s));
    manifest.items.push_back(std::move(rec));
  }
  return manifest;
}

}  // namespace banc::synth

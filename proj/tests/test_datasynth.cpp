//
//  test_datasynth.cpp
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "banc/datasynth.hpp"
#include "banc/dsp.hpp"
#include "banc/fft.hpp"
#include "banc/metrics.hpp"

using namespace banc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::path("/tmp") / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("synth_bir: generated decay matches the requested reverberation time") {
  synth::BirSpec spec;
  spec.t60 = 0.5;
  spec.seed = 41;
  Bir bir = synth_bir(spec, 48000);
  bir.validate();
  CHECK(bir.length() == 48000);
  auto [left, right] = metrics::acoustic_params(bir);
  REQUIRE(left.t60.has_value());
  REQUIRE(right.t60.has_value());
  CHECK(std::abs(*left.t60 - 0.5) / 0.5 < 0.05);
  CHECK(std::abs(*right.t60 - 0.5) / 0.5 < 0.05);
}

TEST_CASE("synth_bir: direct-path delays set the rendered interaural delay") {
  synth::BirSpec spec;
  spec.t60 = 0.3;
  spec.delay_left = 10;
  spec.delay_right = 0;
  spec.reflection_count = 0;
  spec.seed = 42;
  Bir bir = synth_bir(spec, 48000);

  AudioBuffer clean = synth::synth_clean(synth::CleanKind::FilteredNoise, 0.5, 48000, 7);
  AudioBuffer rendered = dsp::render_binaural(clean, bir);
  const double itd = metrics::gcc_phat_itd(rendered.samples[0], rendered.samples[1], 48000,
                                           0.002);
  // Left delayed by 10 samples: the left channel arrives 10 samples late.
  CHECK(std::abs(itd - 10.0 / 48000.0) < 1.5 / 48000.0);
}

TEST_CASE("synth_bir: deterministic per seed, validating its ranges") {
  synth::BirSpec spec;
  spec.t60 = 0.4;
  spec.seed = 43;
  Bir a = synth_bir(spec, 8000);
  Bir b = synth_bir(spec, 8000);
  for (size_t i = 0; i < a.length(); ++i) {
    CHECK(a.left[i] == b.left[i]);
    CHECK(a.right[i] == b.right[i]);
  }
  double peak = 0.0;
  for (double v : a.left) peak = std::max(peak, std::abs(v));
  for (double v : a.right) peak = std::max(peak, std::abs(v));
  CHECK(peak == doctest::Approx(1.0));

  synth::BirSpec bad = spec;
  bad.t60 = 1.5;
  CHECK_THROWS_AS(synth_bir(bad, 8000), Error);
  bad = spec;
  bad.level_offset_db = 9.0;
  CHECK_THROWS_AS(synth_bir(bad, 8000), Error);
}

TEST_CASE("synth_clean: chirp endpoints track the sweep") {
  const int rate = 8000;
  AudioBuffer chirp = synth::synth_clean(synth::CleanKind::Chirp, 2.0, rate, 1);
  CHECK(chirp.frames() == 16000);
  double peak = 0.0;
  for (double v : chirp.samples[0]) peak = std::max(peak, std::abs(v));
  CHECK(peak <= 0.9 + 1e-9);

  dsp::StftConfig cfg{512, 256, 512};
  auto spec = dsp::stft(chirp.samples[0], cfg);
  auto ridge_hz = [&](size_t frame) {
    size_t best = 0;
    double best_mag = -1.0;
    for (size_t k = 0; k < spec.bins(); ++k) {
      if (std::abs(spec.frames[frame][k]) > best_mag) {
        best_mag = std::abs(spec.frames[frame][k]);
        best = k;
      }
    }
    return static_cast<double>(best) * rate / cfg.fft_size;
  };
  // 2% .. 40% of the rate, sampled away from the exact ends.
  CHECK(ridge_hz(1) < 0.06 * rate);
  CHECK(ridge_hz(spec.num_frames() - 4) > 0.30 * rate);
}

TEST_CASE("synth_clean: determinism, band limit and the zero-duration error") {
  const int rate = 8000;
  for (auto kind : {synth::CleanKind::ToneComplex, synth::CleanKind::FilteredNoise,
                    synth::CleanKind::Chirp}) {
    AudioBuffer a = synth::synth_clean(kind, 1.0, rate, 9);
    AudioBuffer b = synth::synth_clean(kind, 1.0, rate, 9);
    for (size_t i = 0; i < a.frames(); ++i) CHECK(a.samples[0][i] == b.samples[0][i]);

    // Negligible energy above the band limit. The analysis window keeps
    // truncation leakage out of the measurement.
    std::vector<double> windowed = a.samples[0];
    auto win = dsp::hann_window(static_cast<int>(windowed.size()));
    for (size_t i = 0; i < windowed.size(); ++i) windowed[i] *= win[i];
    auto spec = rfft(windowed.data(), windowed.size(), 8192);
    double low = 0.0, high = 0.0;
    for (size_t k = 0; k < spec.size(); ++k) {
      const double f = static_cast<double>(k) * rate / 8192;
      if (f < 0.45 * rate) {
        low += std::norm(spec[k]);
      } else if (f > 0.46 * rate) {
        high += std::norm(spec[k]);
      }
    }
    CHECK(high < 1e-6 * low);
  }
  CHECK_THROWS_AS(synth::synth_clean(synth::CleanKind::Chirp, 0.0, rate, 1), Error);
}

TEST_CASE("profiles: split sizes") {
  auto desk = synth::desk_profile();
  CHECK(desk.train == 80);
  CHECK(desk.valid == 10);
  CHECK(desk.test == 10);
  auto ref = synth::reference_profile();
  CHECK(ref.train == 33975);
  CHECK(ref.valid == 750);
  CHECK(ref.test == 752);
}

TEST_CASE("build_dataset: single-speaker layout, manifest and reproducibility") {
  TempDir dir("banc_ds_single");
  synth::BuildOptions opt;
  opt.profile = {"mini", 6, 2, 2};
  opt.sample_rate = 6000;
  opt.speakers = 1;
  opt.seed = 5;
  auto manifest = synth::build_dataset(opt, dir.path.string());

  CHECK(manifest.items.size() == 10);
  CHECK(manifest.counts.at("train") == 6);
  for (const auto& item : manifest.items) {
    CHECK(fs::exists(dir.path / item.mix));
    REQUIRE(item.cleans.size() == 1);
    REQUIRE(item.birs.size() == 1);
    CHECK(fs::exists(dir.path / item.cleans[0]));
    CHECK(fs::exists(dir.path / item.birs[0]));
    AudioBuffer mix = wav_read((dir.path / item.mix).string());
    CHECK(mix.channels() == 2);
    CHECK(mix.frames() == 12000);
    AudioBuffer bir = wav_read((dir.path / item.birs[0]).string());
    CHECK(bir.frames() == 6000);
  }

  auto reloaded = synth::load_manifest((dir.path / "manifest.jsonl").string());
  CHECK(reloaded.items.size() == manifest.items.size());
  CHECK(reloaded.sample_rate == 6000);
  CHECK(reloaded.items[3].id == manifest.items[3].id);
  CHECK(reloaded.items[3].specs[0].seed == manifest.items[3].specs[0].seed);

  // Same options -> byte-identical output.
  TempDir dir2("banc_ds_single_rerun");
  synth::build_dataset(opt, dir2.path.string());
  auto read_bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  CHECK(read_bytes(dir.path / manifest.items[0].mix) ==
        read_bytes(dir2.path / manifest.items[0].mix));
  CHECK(read_bytes(dir.path / "manifest.jsonl") == read_bytes(dir2.path / "manifest.jsonl"));
}

TEST_CASE("build_dataset: two-speaker items re-render exactly and order speakers") {
  TempDir dir("banc_ds_two");
  synth::BuildOptions opt;
  opt.profile = {"mini", 4, 1, 1};
  opt.sample_rate = 6000;
  opt.speakers = 2;
  opt.seed = 6;
  auto manifest = synth::build_dataset(opt, dir.path.string());

  for (const auto& item : manifest.items) {
    REQUIRE(item.specs.size() == 2);
    // Speaker 1 arrives first.
    CHECK(item.specs[0].earliest_arrival() <= item.specs[1].earliest_arrival());

    AudioBuffer mix = wav_read((dir.path / item.mix).string());
    std::vector<std::pair<AudioBuffer, Bir>> sources;
    for (int s = 0; s < 2; ++s) {
      AudioBuffer clean = wav_read((dir.path / item.cleans[s]).string());
      Bir bir = Bir::from_buffer(wav_read((dir.path / item.birs[s]).string()));
      sources.emplace_back(std::move(clean), std::move(bir));
    }
    AudioBuffer re = dsp::mix_overlapped(sources);
    // The stored mixture reproduces the re-rendered one exactly in storage
    // precision (float32).
    for (int c = 0; c < 2; ++c) {
      for (size_t i = 0; i < mix.frames(); ++i) {
        CHECK(static_cast<float>(re.samples[c][i]) ==
              static_cast<float>(mix.samples[c][i]));
      }
    }

    // Equal RMS sources.
    AudioBuffer c1 = wav_read((dir.path / item.cleans[0]).string());
    AudioBuffer c2 = wav_read((dir.path / item.cleans[1]).string());
    auto rms = [](const std::vector<double>& x) {
      double e = 0.0;
      for (double v : x) e += v * v;
      return std::sqrt(e / x.size());
    };
    CHECK(rms(c1.samples[0]) == doctest::Approx(rms(c2.samples[0])).epsilon(1e-4));
  }
}

TEST_CASE("build_dataset: external clean directory must match the rate") {
  TempDir clean_dir("banc_ds_cleansrc");
  AudioBuffer tone = synth::synth_clean(synth::CleanKind::ToneComplex, 2.0, 8000, 3);
  wav_write((clean_dir.path / "a.wav").string(), tone);

  TempDir out("banc_ds_ext");
  synth::BuildOptions opt;
  opt.profile = {"mini", 2, 1, 1};
  opt.sample_rate = 6000;  // mismatch -> error
  opt.clean_dir = clean_dir.path.string();
  CHECK_THROWS_WITH_AS(synth::build_dataset(opt, out.path.string()),
                       doctest::Contains("resampling unsupported"), Error);

  opt.sample_rate = 8000;
  opt.chunk_seconds = 1.5;
  auto manifest = synth::build_dataset(opt, out.path.string());
  CHECK(manifest.items.size() == 4);
  AudioBuffer mix = wav_read((out.path / manifest.items[0].mix).string());
  CHECK(mix.frames() == 12000);
}

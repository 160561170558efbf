//
//  acceptance.cpp — end-to-end acceptance suite. Each criterion prints one
//  PASS/FAIL line; the process exits nonzero if any criterion fails.
//
//  Run with no arguments for the full suite, or pass criterion numbers
//  (e.g. "acceptance 1 3 5") to run a subset.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "banc/codec.hpp"
#include "banc/datasynth.hpp"
#include "banc/gradsuite.hpp"
#include "banc/metrics.hpp"
#include "banc/train.hpp"

using namespace banc;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const std::string& label, bool pass, const std::string& detail) {
  std::printf("%s criterion %2d: %s (%s)\n", pass ? "PASS" : "FAIL", id, label.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(in.good(), "acceptance: cannot open ", p.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<double> random_signal(Rng& rng, size_t n, double amp = 0.5) {
  std::vector<double> v(n);
  for (auto& s : v) s = amp * (rng.uniform() * 2.0 - 1.0);
  return v;
}

// ---------------------------------------------------------------------------

void criterion_1_bandwidth() {
  bits::StreamHeader h;  // reference geometry
  const double bw = bits::bandwidth_bps(h);
  const double comparator = bits::comparator_bps(h);
  const auto rep = bits::compression_report(h);
  const bool pass = bw == 13440.0 && comparator == 25600.0 &&
                    rep.savings_fraction == 1.0 - 13440.0 / 25600.0 &&
                    std::abs(rep.savings_fraction - 0.475) < 1e-15;
  std::ostringstream os;
  os << bw << " bps vs " << comparator << " bps comparator, savings "
     << 100.0 * rep.savings_fraction << "%";
  report(1, "bandwidth arithmetic", pass, os.str());
}

void criterion_2_shapes() {
  const auto t0 = Clock::now();
  model::Model<float> m(model::reference_config());
  m.set_training(false);
  Rng rng(2);
  ad::Tensor<float> x({1, 2, 96000});
  for (int64_t i = 0; i < x.numel(); ++i) {
    x.data()[i] = 0.1f * static_cast<float>(rng.uniform() * 2.0 - 1.0);
  }
  auto lat = m.encode(nullptr, x);
  auto sc = m.quantize_speech(nullptr, m.project_speech(nullptr, lat.speech));
  auto ic = m.quantize_ir(nullptr, m.project_ir(nullptr, lat.ir));
  auto cleans = m.decode_speech(nullptr, sc.straight_through);
  auto birs = m.decode_ir(nullptr, ic.straight_through);
  const double elapsed = seconds_since(t0);

  const bool pass = lat.speech.shape() == std::vector<int64_t>{1, 512, 320} &&
                    lat.ir.shape() == std::vector<int64_t>{1, 512, 16} &&
                    cleans.size() == 1 && birs.size() == 1 &&
                    cleans[0].shape() == std::vector<int64_t>{1, 1, 96000} &&
                    birs[0].shape() == std::vector<int64_t>{1, 2, 48000} && elapsed < 10.0;
  std::ostringstream os;
  os << "latents 320/16 frames, outputs " << cleans[0].size(2) << "/" << birs[0].size(2)
     << " samples, " << elapsed << " s";
  report(2, "shape algebra at 2 s / 48 kHz", pass, os.str());
}

void criterion_3_bit_budget() {
  bits::StreamHeader h;  // reference geometry
  bool pass = h.bits_per_frame() == 80 && h.payload_bytes_per_chunk() == 3360;

  Rng seeder(3);
  for (int trial = 0; pass && trial < 1000; ++trial) {
    Rng rng(seeder.next_u64());
    bits::ChunkCodes chunk;
    chunk.speech.resize(h.speech_frames_per_chunk() * h.num_codebooks);
    chunk.ir.resize(h.ir_frames_per_chunk() * h.num_codebooks);
    for (auto& v : chunk.speech) v = static_cast<uint16_t>(rng.below(h.codebook_size));
    for (auto& v : chunk.ir) v = static_cast<uint16_t>(rng.below(h.codebook_size));
    auto bytes = bits::pack(h, {chunk});
    auto [h2, back] = bits::unpack(bytes);
    pass = pass && back.size() == 1 && back[0].speech == chunk.speech && back[0].ir == chunk.ir;
  }
  report(3, "bit budget and pack/unpack bijection", pass,
         "80 bits/frame, 3360-byte chunks, 1000 random round trips");
}

void criterion_4_gradients() {
  const auto t0 = Clock::now();
  double worst_op = 0.0;
  bool pass = true;
  for (const auto& r : gradsuite::run_op_checks(20)) {
    worst_op = std::max(worst_op, r.rel_err);
    pass = pass && r.pass;
  }
  auto full = gradsuite::run_full_graph_check(2);
  pass = pass && full.pass;
  const double elapsed = seconds_since(t0);
  pass = pass && elapsed < 300.0;
  std::ostringstream os;
  os << "ops worst " << worst_op << " < 1e-5, full graph " << full.rel_err << " < 1e-4, "
     << elapsed << " s";
  report(4, "finite-difference gradient suite", pass, os.str());
}

void criterion_5_convolution() {
  Rng rng(5);
  bool pass = true;
  double worst = 0.0;
  for (int trial = 0; trial < 6; ++trial) {
    const size_t n = 256 + rng.below(3840);  // lengths up to 4096
    const size_t k = 65 + rng.below(n - 65);
    auto x = random_signal(rng, n);
    auto h = random_signal(rng, std::min(k, n));
    auto direct = dsp::convolve_direct(x, h);
    auto fft = dsp::convolve_fft(x, h);
    for (size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(direct[i] - fft[i]));
  }
  pass = worst < 1e-9;

  // Two-source mixture linearity.
  double resid = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    AudioBuffer a(1, 12000, 6000), b(1, 12000, 6000);
    a.samples[0] = random_signal(rng, 12000);
    b.samples[0] = random_signal(rng, 12000);
    Bir ba(6000, 6000), bb(6000, 6000);
    ba.left = random_signal(rng, 6000, 0.3);
    ba.right = random_signal(rng, 6000, 0.3);
    bb.left = random_signal(rng, 6000, 0.3);
    bb.right = random_signal(rng, 6000, 0.3);
    auto mix = dsp::mix_overlapped({{a, ba}, {b, bb}});
    auto ra = dsp::render_binaural(a, ba);
    auto rb = dsp::render_binaural(b, bb);
    for (int c = 0; c < 2; ++c) {
      for (size_t i = 0; i < mix.samples[c].size(); ++i) {
        resid = std::max(resid,
                         std::abs(mix.samples[c][i] - ra.samples[c][i] - rb.samples[c][i]));
      }
    }
  }
  pass = pass && resid < 1e-12;
  std::ostringstream os;
  os << "fft vs direct " << worst << " < 1e-9, mixture residual " << resid << " < 1e-12";
  report(5, "convolution oracle", pass, os.str());
}

void criterion_6_metric_oracles() {
  Rng rng(6);
  // ITD: 48-sample delay at 48 kHz reads 1.000 ms.
  auto left = random_signal(rng, 4096, 1.0);
  std::vector<double> right(left.size(), 0.0);
  for (size_t t = 48; t < left.size(); ++t) right[t] = left[t - 48];
  const double itd = metrics::gcc_phat_itd(left, right, 48000);
  bool pass = std::abs(std::abs(itd) - 0.001) < 1e-5;

  // Brute-force cross-correlation oracle agrees.
  double best = -1e300;
  int best_lag = 0;
  for (int lag = -96; lag <= 96; ++lag) {
    double acc = 0.0;
    for (int t = 0; t < static_cast<int>(left.size()); ++t) {
      const int j = t - lag;
      if (j >= 0 && j < static_cast<int>(right.size())) acc += left[t] * right[j];
    }
    if (acc > best) {
      best = acc;
      best_lag = lag;
    }
  }
  pass = pass && std::abs(itd - static_cast<double>(best_lag) / 48000.0) < 1e-5;

  // ILD: energy-doubled channel reads 20 log10 2.
  AudioBuffer ref(2, 2048, 48000);
  ref.samples[0] = random_signal(rng, 2048);
  ref.samples[1] = random_signal(rng, 2048);
  AudioBuffer rec = ref;
  for (auto& v : rec.samples[0]) v *= std::sqrt(2.0);
  auto [el, er] = metrics::ild_errors(ref, rec);
  pass = pass && std::abs(el - 20.0 * std::log10(2.0)) < 1e-6 && er == 0.0;
  pass = pass && std::abs(el - 6.0206) < 1e-4;

  // Hinge values at zero discriminator output.
  auto zeros = [](int64_t n) {
    std::vector<ad::Tensor<double>> s;
    s.push_back(ad::Tensor<double>({1, 1, n}));
    return s;
  };
  const double d1 = loss::disc_loss<double>(nullptr, zeros(7), zeros(7), {zeros(5)}, {zeros(5)})
                        .item();
  const double d2 = loss::disc_loss<double>(nullptr, zeros(7), zeros(7),
                                            {zeros(5), zeros(3)}, {zeros(5), zeros(3)})
                        .item();
  pass = pass && d1 == 4.0 && d2 == 6.0;
  std::ostringstream os;
  os << "itd " << 1000.0 * itd << " ms, ild " << el << " dB, hinge " << d1 << "/" << d2;
  report(6, "spatial metric oracles", pass, os.str());
}

void criterion_7_acoustics() {
  bool pass = true;
  std::ostringstream os;
  for (double t60 : {0.2, 0.5, 0.9}) {
    Rng rng(static_cast<uint64_t>(t60 * 1000));
    std::vector<double> ir(48000);
    for (int t = 0; t < 48000; ++t) {
      ir[t] = rng.normal() * std::exp(-6.9078 * t / (t60 * 48000.0));
    }
    auto p = metrics::channel_acoustics(ir, 48000);
    const double err = p.t60 ? std::abs(*p.t60 - t60) / t60 : 1.0;
    pass = pass && err < 0.05;
    os << "t60 " << t60 << "->" << (p.t60 ? *p.t60 : -1.0) << " ";
  }
  std::vector<double> impulse(48000, 0.0);
  impulse[960] = 0.7;
  auto p = metrics::channel_acoustics(impulse, 48000);
  pass = pass && std::abs(p.cte_ms - 1000.0 * 960.0 / 48000.0) < 1e-9;
  pass = pass && p.drr_db.has_value() && *p.drr_db == 100.0;
  os << "impulse cte " << p.cte_ms << " ms drr " << *p.drr_db << " dB";
  report(7, "acoustic-parameter oracle", pass, os.str());
}

void criterion_8_training_trend() {
  const auto t0 = Clock::now();
  const fs::path data_dir = "/tmp/banc_accept_data";
  const fs::path run_dir = "/tmp/banc_accept_run";
  fs::remove_all(data_dir);
  fs::remove_all(run_dir);

  synth::BuildOptions opt;
  opt.profile = {"accept", 20, 1, 1};
  opt.sample_rate = 6000;
  opt.speakers = 1;
  opt.seed = 9;
  auto manifest = synth::build_dataset(opt, data_dir.string());
  auto dataset = train::Dataset<float>::load(data_dir.string(), manifest, "train");

  model::Model<float> m(model::desk_config());
  train::TrainPlan plan;
  plan.stage1_steps = 300;
  plan.stage2_steps = 50;
  plan.batch_size = 4;
  plan.seed = 5;
  train::Trainer<float> trainer(m, dataset, plan, run_dir.string());
  auto r1 = trainer.run_stage1();

  const double initial = r1.reports.front().metric;
  const double final_metric = r1.reports.back().metric;
  bool pass = final_metric <= 0.5 * initial;

  // Trend: means of consecutive 50-step windows are non-increasing, with up
  // to two violations tolerated.
  std::vector<double> windows;
  for (size_t i = 0; i + 50 <= r1.reports.size(); i += 50) {
    double acc = 0.0;
    for (size_t j = i; j < i + 50; ++j) acc += r1.reports[j].metric;
    windows.push_back(acc / 50.0);
  }
  int violations = 0;
  for (size_t i = 1; i < windows.size(); ++i) {
    if (windows[i] > windows[i - 1] + 1e-9) ++violations;
  }
  pass = pass && violations <= 2;

  // Stage 2: frozen tensors bit-identical to the stage-1 checkpoint, critic
  // loss below its zero-initialization value of 4 within 50 steps.
  auto r2 = trainer.run_stage2();
  auto stage1_tensors = train::read_tensors((run_dir / "stage1/checkpoint.banckpt").string());
  std::map<std::string, const train::NamedTensor*> index;
  for (const auto& t : stage1_tensors) index[t.name] = &t;
  bool frozen_ok = true;
  const auto& frozen_groups = model::Model<float>::analysis_groups();
  for (auto& e : m.registry().entries()) {
    bool frozen = false;
    for (const auto& g : frozen_groups) frozen = frozen || e.group == g;
    if (!frozen) continue;
    const auto* saved = index.at(e.name);
    for (int64_t i = 0; i < e.tensor.numel(); ++i) {
      frozen_ok = frozen_ok && saved->data[i] == e.tensor.data()[i];
    }
  }
  double min_disc = 1e300;
  for (const auto& rep : r2.reports) min_disc = std::min(min_disc, rep.disc);
  const double elapsed = seconds_since(t0);
  pass = pass && frozen_ok && min_disc < 4.0 && elapsed < 1800.0;

  std::ostringstream os;
  os << "metric " << initial << " -> " << final_metric << " (ratio "
     << final_metric / initial << "), ma violations " << violations << ", min disc " << min_disc
     << ", frozen " << (frozen_ok ? "intact" : "CHANGED") << ", " << elapsed << " s";
  report(8, "desk-scale training trend", pass, os.str());
}

void criterion_9_determinism() {
  auto run_pipeline = [](const std::string& tag) {
    const fs::path data_dir = fs::path("/tmp") / ("banc_det_data_" + tag);
    const fs::path run_dir = fs::path("/tmp") / ("banc_det_run_" + tag);
    fs::remove_all(data_dir);
    fs::remove_all(run_dir);

    synth::BuildOptions opt;
    opt.profile = {"det", 4, 1, 1};
    opt.sample_rate = 3000;
    opt.speakers = 1;
    opt.seed = 77;
    auto manifest = synth::build_dataset(opt, data_dir.string());
    auto dataset = train::Dataset<float>::load(data_dir.string(), manifest, "train");
    model::Model<float> m(model::toy_config());
    train::TrainPlan plan;
    plan.stage1_steps = 6;
    plan.stage2_steps = 2;
    plan.batch_size = 2;
    plan.seed = 13;
    train::Trainer<float> trainer(m, dataset, plan, run_dir.string());
    trainer.run_stage1();

    AudioBuffer input = wav_read((data_dir / manifest.items[0].mix).string());
    auto [header, chunks] = codec::encode_buffer(m, input);
    bits::write_stream((run_dir / "item.banc").string(), header, chunks);

    return std::tuple{read_bytes(run_dir / "stage1/loss_log.jsonl"),
                      read_bytes(run_dir / "stage1/checkpoint.banckpt"),
                      read_bytes(run_dir / "item.banc"),
                      read_bytes(data_dir / manifest.items[0].mix)};
  };
  auto a = run_pipeline("a");
  auto b = run_pipeline("b");
  const bool logs = std::get<0>(a) == std::get<0>(b);
  const bool ckpt = std::get<1>(a) == std::get<1>(b);
  const bool stream = std::get<2>(a) == std::get<2>(b);
  const bool data = std::get<3>(a) == std::get<3>(b);
  std::ostringstream os;
  os << "loss log " << (logs ? "==" : "!=") << ", checkpoint " << (ckpt ? "==" : "!=")
     << ", stream " << (stream ? "==" : "!=") << ", dataset " << (data ? "==" : "!=");
  report(9, "end-to-end determinism", logs && ckpt && stream && data, os.str());
}

void criterion_10_metric_decomposition() {
  Rng rng(10);
  loss::SpectralSettings ss;
  ss.stft = {256, 64, 128};
  ss.n_mels = 20;
  loss::SpectralOps<double> ops(ss, 8000);
  auto rand_t = [&](std::vector<int64_t> shape) {
    ad::Tensor<double> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform() * 2.0 - 1.0;
    return t;
  };
  bool pass = true;
  double worst = 0.0;
  for (int trial = 0; trial < 3; ++trial) {
    loss::MetricBatch<double> batch;
    batch.binaural_ref = rand_t({2, 2, 512});
    batch.binaural_rec = rand_t({2, 2, 512});
    for (int s = 0; s < 2; ++s) {
      batch.clean_ref.push_back(rand_t({2, 1, 512}));
      batch.clean_rec.push_back(rand_t({2, 1, 512}));
      batch.bir_ref.push_back(rand_t({2, 2, 128}));
      batch.bir_rec.push_back(rand_t({2, 2, 128}));
    }
    auto terms = loss::metric_loss<double>(nullptr, ops, batch, true);
    double expansion =
        loss::mel_loss<double>(nullptr, ops, batch.binaural_ref, batch.binaural_rec).item() +
        loss::mag_loss<double>(nullptr, ops, batch.binaural_ref, batch.binaural_rec).item();
    for (int s = 0; s < 2; ++s) {
      expansion +=
          loss::mel_loss<double>(nullptr, ops, batch.clean_ref[s], batch.clean_rec[s]).item();
      expansion +=
          loss::mag_loss<double>(nullptr, ops, batch.clean_ref[s], batch.clean_rec[s]).item();
      expansion += loss::ir_loss<double>(nullptr, batch.bir_ref[s], batch.bir_rec[s]).item();
    }
    worst = std::max(worst, std::abs(terms.total.item() - expansion));
  }
  pass = worst < 1e-9;
  std::ostringstream os;
  os << "two-speaker totals match the term expansion, worst " << worst;
  report(10, "metric-loss decomposition", pass, os.str());
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto want = [&](int id) { return only.empty() || only.count(id) != 0; };

  struct Entry {
    int id;
    void (*fn)();
    const char* label;
  };
  const Entry entries[] = {
      {1, criterion_1_bandwidth, "bandwidth arithmetic"},
      {2, criterion_2_shapes, "shape algebra at 2 s / 48 kHz"},
      {3, criterion_3_bit_budget, "bit budget and pack/unpack bijection"},
      {4, criterion_4_gradients, "finite-difference gradient suite"},
      {5, criterion_5_convolution, "convolution oracle"},
      {6, criterion_6_metric_oracles, "spatial metric oracles"},
      {7, criterion_7_acoustics, "acoustic-parameter oracle"},
      {8, criterion_8_training_trend, "desk-scale training trend"},
      {9, criterion_9_determinism, "end-to-end determinism"},
      {10, criterion_10_metric_decomposition, "metric-loss decomposition"},
  };
  for (const auto& e : entries) {
    if (!want(e.id)) continue;
    try {
      e.fn();
    } catch (const std::exception& ex) {
      report(e.id, e.label, false, std::string("exception: ") + ex.what());
    }
  }
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}

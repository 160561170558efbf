//
//  gradsuite.hpp — the double-precision gradient verification suite: every
//  differentiable operator against central finite differences, plus the full
//  single-speaker generator objective on a toy geometry.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <string>
#include <vector>

#include "banc/losses.hpp"
#include "banc/model.hpp"
#include "banc/train.hpp"

namespace banc::gradsuite {

struct CheckResult {
  std::string name;
  double rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

namespace detail {

inline ad::Tensor<double> rand_t(Rng& rng, std::vector<int64_t> shape, double amp = 1.0) {
  ad::Tensor<double> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = amp * (rng.uniform() * 2.0 - 1.0);
  return t;
}

inline CheckResult run_one(
    const std::string& name, double tolerance,
    const std::function<ad::Tensor<double>(ad::Tape<double>*, std::vector<ad::Tensor<double>>&)>& f,
    std::vector<ad::Tensor<double>> inputs, const ad::GradCheckOptions& opt = {}) {
  CheckResult r;
  r.name = name;
  r.tolerance = tolerance;
  r.rel_err = ad::grad_check<double>(f, std::move(inputs), opt);
  r.pass = r.rel_err < tolerance;
  return r;
}

}  // namespace detail

// Per-operator finite-difference checks at 64-bit, randomized shapes over
// many seeds.
inline std::vector<CheckResult> run_op_checks(int seeds = 20) {
  namespace ad = banc::ad;
  using ad::Tape;
  using ad::Tensor;
  std::vector<CheckResult> results;
  constexpr double kTol = 1e-5;

  for (int seed = 0; seed < seeds; ++seed) {
    Rng rng(seed + 1);
    const std::string tag = " (seed " + std::to_string(seed) + ")";

    {
      const int S = 1 + static_cast<int>(rng.below(3));
      const int K = 2 * S + static_cast<int>(rng.below(4));
      Tensor<double> x = detail::rand_t(rng, {1, 2, 6 * S});
      Tensor<double> w = detail::rand_t(rng, {3, 2, K});
      Tensor<double> b = detail::rand_t(rng, {3});
      results.push_back(detail::run_one(
          "conv1d_causal" + tag, kTol,
          [S](Tape<double>* t, std::vector<Tensor<double>>& in) {
            auto y = ad::conv1d_causal(t, in[0], in[1], in[2], S);
            return ad::mean(t, ad::mul(t, y, y));
          },
          {x, w, b}));
    }
    {
      const int S = 2 + static_cast<int>(rng.below(3));
      Tensor<double> x = detail::rand_t(rng, {1, 3, 5});
      Tensor<double> w = detail::rand_t(rng, {3, 2, 2 * S});
      Tensor<double> b = detail::rand_t(rng, {2});
      results.push_back(detail::run_one(
          "conv_transpose1d_causal" + tag, kTol,
          [S](Tape<double>* t, std::vector<Tensor<double>>& in) {
            auto y = ad::conv_transpose1d_causal(t, in[0], in[1], in[2], S);
            return ad::mean(t, ad::mul(t, y, y));
          },
          {x, w, b}));
    }
    {
      Tensor<double> x = detail::rand_t(rng, {2, 7});
      for (int64_t i = 0; i < x.numel(); ++i) {
        if (std::abs(x.data()[i]) < 0.05) x.data()[i] = 0.1;  // stay off the kinks
      }
      for (auto kind : {ad::Pointwise::LeakyRelu, ad::Pointwise::Elu, ad::Pointwise::Sigmoid,
                        ad::Pointwise::Tanh, ad::Pointwise::Abs}) {
        results.push_back(detail::run_one(
            "pointwise" + std::to_string(static_cast<int>(kind)) + tag, kTol,
            [kind](Tape<double>* t, std::vector<Tensor<double>>& in) {
              auto y = ad::pointwise(t, kind, in[0], 0.2);
              return ad::mean(t, ad::mul(t, y, y));
            },
            {x}));
      }
    }
    {
      Tensor<double> x = detail::rand_t(rng, {2, 3, 4});
      Tensor<double> g = detail::rand_t(rng, {3}, 0.7);
      Tensor<double> b = detail::rand_t(rng, {3}, 0.7);
      for (bool training : {true, false}) {
        results.push_back(detail::run_one(
            std::string("batch_norm_") + (training ? "train" : "eval") + tag, kTol,
            [training](Tape<double>* t, std::vector<Tensor<double>>& in) {
              Tensor<double> rm = Tensor<double>::full({3}, 0.05);
              Tensor<double> rv = Tensor<double>::full({3}, 0.8);
              auto y = ad::batch_norm1d(t, in[0], in[1], in[2], rm, rv, training);
              return ad::mean(t, ad::mul(t, y, y));
            },
            {x, g, b}));
      }
    }
    {
      Tensor<double> a = detail::rand_t(rng, {2, 3, 4});
      Tensor<double> b = detail::rand_t(rng, {3, 1});
      Tensor<double> c = detail::rand_t(rng, {2, 3, 4});
      results.push_back(detail::run_one(
          "arithmetic" + tag, kTol,
          [](Tape<double>* t, std::vector<Tensor<double>>& in) {
            auto s = ad::add(t, in[0], in[1]);
            auto m = ad::mul(t, s, in[2]);
            auto l1 = ad::l1_loss(t, m, in[2]);
            auto l2 = ad::mse_loss(t, s, in[2]);
            return ad::add(t, l1, ad::add(t, l2, ad::mean(t, ad::abs_op(t, m))));
          },
          {a, b, c}));
    }
    {
      Tensor<double> x = detail::rand_t(rng, {2, 12});
      Tensor<double> k = detail::rand_t(rng, {2, 5});
      results.push_back(detail::run_one(
          "fir_causal" + tag, kTol,
          [](Tape<double>* t, std::vector<Tensor<double>>& in) {
            auto y = ad::fir_causal(t, in[0], in[1]);
            return ad::mean(t, ad::mul(t, y, y));
          },
          {x, k}));
    }
    {
      Tensor<double> x = detail::rand_t(rng, {1, 1, 64});
      dsp::MelBank bank = dsp::MelBank::build(32, 800, 6, 0.0, 400.0);
      results.push_back(detail::run_one(
          "spectral" + tag, kTol,
          [&bank](Tape<double>* t, std::vector<Tensor<double>>& in) {
            auto m = ad::stft_mag(t, in[0], {32, 16, 32});
            auto mel = ad::mel_apply(t, m, bank);
            auto lm = ad::log_eps(t, mel, 1e-5);
            return ad::add(t, ad::mean(t, lm), ad::mean(t, ad::log_eps(t, m, 1e-5)));
          },
          {x}));
    }
    {
      Tensor<double> x = detail::rand_t(rng, {1, 2, 24});
      results.push_back(detail::run_one(
          "fold_pool_shape" + tag, kTol,
          [](Tape<double>* t, std::vector<Tensor<double>>& in) {
            auto f = ad::fold_period(t, in[0], 3);
            auto p = ad::avg_pool1d(t, f, 2, 2);
            auto c = ad::concat(t, {p, p}, 1);
            auto s = ad::slice(t, c, 1, 1, 2);
            auto padded = ad::pad_last(t, s, 1, 2);
            return ad::mean(t, ad::mul(t, padded, padded));
          },
          {x}));
    }
  }
  return results;
}

// The complete single-speaker generator objective (metric + adversarial +
// codebook commitment) on the toy geometry, finite-differenced over a probe
// subset of every parameter tensor and the input.
//
// A quantizer is piecewise constant, so its loss surface only has a usable
// derivative where quantization is exact. The codebooks are therefore
// snapped to the latents of the probe batch first: the selected codewords
// equal the latents, the straight-through estimator coincides with the true
// gradient, and a finite-difference probe moves inside one quantization
// cell (the snapped margins are checked).
inline CheckResult run_full_graph_check(int probes_per_tensor = 2) {
  using ad::Tape;
  using ad::Tensor;

  model::ModelConfig cfg = model::toy_config();
  model::Model<double> m(cfg);
  m.set_training(false);  // pure function: no EMA or batch-stat updates

  // Give the critic heads signal so the adversarial path carries gradients.
  // The scale is kept small so every hinge stays strictly on its active
  // branch: a score crossing 1 under a probe would bias the differences.
  Rng wr(2024);
  for (auto& e : m.registry().entries()) {
    if ((e.group == "disc_binaural" || e.group == "disc_clean") &&
        e.name.find(".out.weight") != std::string::npos) {
      for (int64_t i = 0; i < e.tensor.numel(); ++i) {
        e.tensor.data()[i] = 0.01 * (wr.uniform() * 2.0 - 1.0);
      }
    }
  }

  Rng rng(77);
  const int64_t L = cfg.chunk_samples();
  Tensor<double> mix = detail::rand_t(rng, {1, 2, L}, 0.5);
  Tensor<double> mix_ref = mix.detach();  // fixed target, independent of the probes
  Tensor<double> clean_ref = detail::rand_t(rng, {1, 1, L}, 0.5);
  Tensor<double> bir_ref = detail::rand_t(rng, {1, 2, cfg.ir_samples()}, 0.3);
  loss::SpectralSettings ss;
  ss.stft = {256, 300, 256};
  ss.n_mels = 16;
  // A soft log floor keeps the spectral losses well conditioned for central
  // differences; the production floor of 1e-5 puts near-silent bins on a
  // region whose curvature (~eps^-3) swamps an h = 1e-5 probe.
  ss.eps = 0.05;
  loss::SpectralOps<double> spectral(ss, cfg.sample_rate);

  // A raw initialization reconstructs at wildly mismatched scale, putting
  // |loss| in the thousands where double-precision central differences
  // cannot resolve small gradient components. A short optimizer run
  // scale-matches the decoders first; the probes then sit at a numerically
  // benign point of the same graph.
  {
    m.set_training(true);
    train::Adam<double> warm(2e-3);
    for (auto& e : m.registry().entries()) {
      if (e.trainable && e.group != "disc_binaural" && e.group != "disc_clean") {
        warm.add(e.name, e.tensor);
      }
    }
    for (int step = 0; step < 80; ++step) {
      ad::Tape<double> tape;
      Rng reseed = rng_for(4242, step);
      auto fwd = m.forward(&tape, mix, &reseed);
      loss::MetricBatch<double> batch;
      batch.binaural_ref = mix_ref;
      batch.binaural_rec = fwd.binaural;
      batch.clean_ref = {clean_ref};
      batch.clean_rec = {fwd.cleans[0]};
      batch.bir_ref = {bir_ref};
      batch.bir_rec = {fwd.birs[0]};
      auto terms = loss::metric_loss(&tape, spectral, batch, true);
      auto total = loss::gen_loss(&tape, terms.total, Tensor<double>(), fwd.vq_commit, 0.0, 1.0);
      warm.zero_grad();
      tape.backward(total);
      warm.step();
    }
    m.set_training(false);
  }

  // Snap the codebooks: stage 0 holds the exact latent frame vectors, later
  // stages hold the zero vector; every unused entry sits far away.
  {
    auto lat = m.encode(nullptr, mix);
    auto speech_code = m.project_speech(nullptr, lat.speech);
    auto ir_code = m.project_ir(nullptr, lat.ir);
    auto snap = [&](const char* name, const Tensor<double>& code) {
      Tensor<double>& books = m.registry().find(name)->tensor;
      const int64_t stages = books.size(0), size = books.size(1), dim = books.size(2);
      const int64_t frames = code.size(2);
      require(frames < size, "gradsuite: toy codebook too small for snapping");
      for (int64_t i = 0; i < books.numel(); ++i) books.data()[i] = 0.0;
      for (int64_t q = 0; q < stages; ++q) {
        for (int64_t j = 0; j < size; ++j) {
          books.data()[(q * size + j) * dim] = 1000.0 + 100.0 * static_cast<double>(j);
        }
      }
      for (int64_t t = 0; t < frames; ++t) {  // stage 0: the latents themselves
        for (int64_t d = 0; d < dim; ++d) {
          books.data()[t * dim + d] = code.data()[d * frames + t];
        }
      }
      for (int64_t q = 1; q < stages; ++q) {  // later stages: zero residual
        for (int64_t d = 0; d < dim; ++d) books.data()[(q * size) * dim + d] = 0.0;
      }
      // Distinct snapped codewords must be well separated, or a probe could
      // hop cells.
      double min_gap = 1e300;
      for (int64_t a = 0; a < frames; ++a) {
        for (int64_t b = a + 1; b < frames; ++b) {
          double gap = 0.0;
          for (int64_t d = 0; d < dim; ++d) {
            const double diff = books.data()[a * dim + d] - books.data()[b * dim + d];
            gap += diff * diff;
          }
          min_gap = std::min(min_gap, gap);
        }
      }
      require(min_gap > 1e-3, "gradsuite: snapped codewords too close (", min_gap, ")");
    };
    snap("speech_quantizer.codebooks", speech_code);
    snap("ir_quantizer.codebooks", ir_code);
  }

  // Every hinge must sit on its active branch with a healthy margin to the
  // kink at score 1.
  {
    auto fwd = m.forward(nullptr, mix, nullptr);
    double max_score = -1e300;
    auto scan = [&](const std::vector<Tensor<double>>& scores) {
      for (const auto& s : scores) {
        for (int64_t i = 0; i < s.numel(); ++i) {
          max_score = std::max(max_score, static_cast<double>(s.data()[i]));
        }
      }
    };
    scan(m.discriminate_binaural(nullptr, fwd.binaural));
    scan(m.discriminate_clean(nullptr, fwd.cleans[0]));
    require(max_score < 0.9, "gradsuite: critic scores too close to the hinge (max ",
            max_score, ")");
  }

  // The decoder consumes the latent codes directly: with exact (snapped)
  // quantization this is the same value the straight-through estimator
  // forwards, and unlike the argmin output it varies with the probes, so
  // finite differences see the gradient the production backward computes.
  auto f = [&](Tape<double>* tape, std::vector<Tensor<double>>&) {
    auto lat = m.encode(tape, mix);
    auto speech_code = m.project_speech(tape, lat.speech);
    auto ir_code = m.project_ir(tape, lat.ir);
    auto sq = m.quantize_speech(tape, speech_code);
    auto iq = m.quantize_ir(tape, ir_code);
    auto vq_commit = ad::add(tape, sq.commit, iq.commit);

    auto cleans = m.decode_speech(tape, speech_code);
    auto birs = m.decode_ir(tape, ir_code);
    auto binaural = m.reconstruct(tape, cleans, birs);

    loss::MetricBatch<double> batch;
    batch.binaural_ref = mix_ref;
    batch.binaural_rec = binaural;
    batch.clean_ref = {clean_ref};
    batch.clean_rec = {cleans[0]};
    batch.bir_ref = {bir_ref};
    batch.bir_rec = {birs[0]};
    auto terms = loss::metric_loss(tape, spectral, batch, true);
    auto adv = m.with_frozen_discriminators([&] {
      auto fake_b = m.discriminate_binaural(tape, binaural);
      auto fake_s = m.discriminate_clean(tape, cleans[0]);
      return loss::adv_loss(tape, fake_b, {fake_s});
    });
    return loss::gen_loss(tape, terms.total, adv, vq_commit, 1.0, 1.0);
  };

  std::vector<Tensor<double>> inputs{mix};
  for (auto& e : m.registry().entries()) {
    if (e.trainable && e.group != "disc_binaural" && e.group != "disc_clean") {
      inputs.push_back(e.tensor);
    }
  }
  ad::GradCheckOptions opt;
  // Spectral magnitudes of near-silent bins put sub-1e-4-scale cusps into
  // the surface, so the probe step must drop well under them. The warm
  // start keeps |f| small enough that roundoff stays negligible at this h.
  opt.h = 1e-7;
  opt.zero_floor = 1e-3;
  opt.max_probes_per_input = probes_per_tensor;
  opt.probe_seed = 99;
  CheckResult r;
  r.name = "full_generator_graph(toy)";
  r.tolerance = 1e-4;
  r.rel_err = ad::grad_check<double>(f, std::move(inputs), opt);
  r.pass = r.rel_err < r.tolerance;
  return r;
}

}  // namespace banc::gradsuite

//
//  losses.hpp — training objectives: log-mel L1, log-magnitude MSE,
//  impulse-response MSE, their combination over binaural/clean/IR targets,
//  and the hinge adversarial pair.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <string>
#include <vector>

#include "banc/autodiff.hpp"

namespace banc::loss {

using ad::Tape;
using ad::Tensor;

struct SpectralSettings {
  dsp::StftConfig stft{2048, 300, 1200};  // one frame per speech code frame
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 0.0;  // 0 -> sample_rate / 2
  double eps = 1e-5;
};

// Precomputed spectral front end shared by the mel and magnitude losses.
template <typename T>
class SpectralOps {
 public:
  SpectralOps(const SpectralSettings& s, int sample_rate)
      : settings_(s),
        bank_(dsp::MelBank::build(s.stft.fft_size, sample_rate, s.n_mels, s.fmin,
                                  s.fmax > 0 ? s.fmax : sample_rate / 2.0)) {}

  const SpectralSettings& settings() const { return settings_; }

  // log(mel(|STFT|) + eps), shape [B, C, frames, n_mels]
  Tensor<T> log_mel(Tape<T>* tape, const Tensor<T>& x) const {
    auto mags = ad::stft_mag(tape, x, settings_.stft);
    auto mel = ad::mel_apply(tape, mags, bank_);
    return ad::log_eps(tape, mel, static_cast<T>(settings_.eps));
  }

  // log(|STFT| + eps), shape [B, C, frames, bins]
  Tensor<T> log_mag(Tape<T>* tape, const Tensor<T>& x) const {
    auto mags = ad::stft_mag(tape, x, settings_.stft);
    return ad::log_eps(tape, mags, static_cast<T>(settings_.eps));
  }

 private:
  SpectralSettings settings_;
  dsp::MelBank bank_;
};

// Mean absolute difference of the log-mel matrices.
template <typename T>
Tensor<T> mel_loss(Tape<T>* tape, const SpectralOps<T>& ops, const Tensor<T>& x,
                   const Tensor<T>& x_hat) {
  require(x.shape() == x_hat.shape(), "mel_loss: length/shape mismatch");
  return ad::l1_loss(tape, ops.log_mel(tape, x), ops.log_mel(tape, x_hat));
}

// Mean squared difference of the log magnitudes.
template <typename T>
Tensor<T> mag_loss(Tape<T>* tape, const SpectralOps<T>& ops, const Tensor<T>& x,
                   const Tensor<T>& x_hat) {
  require(x.shape() == x_hat.shape(), "mag_loss: length/shape mismatch");
  return ad::mse_loss(tape, ops.log_mag(tape, x), ops.log_mag(tape, x_hat));
}

// Time-domain MSE over both channels of an impulse-response pair.
template <typename T>
Tensor<T> ir_loss(Tape<T>* tape, const Tensor<T>& b, const Tensor<T>& b_hat) {
  require(b.shape() == b_hat.shape(), "ir_loss: length/shape mismatch");
  return ad::mse_loss(tape, b, b_hat);
}

// Ground truths plus reconstructions for one batch.
template <typename T>
struct MetricBatch {
  Tensor<T> binaural_ref, binaural_rec;         // [B, 2, L]
  std::vector<Tensor<T>> clean_ref, clean_rec;  // per speaker, [B, 1, L]
  std::vector<Tensor<T>> bir_ref, bir_rec;      // per speaker, [B, 2, L_ir]
};

template <typename T>
struct MetricTerms {
  Tensor<T> mel, mag, ir, total;
};

// Spectral losses on the binaural pair plus, per speaker, spectral losses on
// the clean estimate and time-domain MSE on the impulse-response estimate.
template <typename T>
MetricTerms<T> metric_loss(Tape<T>* tape, const SpectralOps<T>& ops, const MetricBatch<T>& batch,
                           bool use_mag) {
  require(batch.clean_ref.size() == batch.clean_rec.size() &&
              batch.bir_ref.size() == batch.bir_rec.size() &&
              batch.clean_ref.size() == batch.bir_ref.size(),
          "metric_loss: speaker count mismatch");
  MetricTerms<T> terms;
  terms.mel = mel_loss(tape, ops, batch.binaural_ref, batch.binaural_rec);
  for (size_t i = 0; i < batch.clean_ref.size(); ++i) {
    terms.mel = ad::add(tape, terms.mel, mel_loss(tape, ops, batch.clean_ref[i], batch.clean_rec[i]));
  }
  if (use_mag) {
    terms.mag = mag_loss(tape, ops, batch.binaural_ref, batch.binaural_rec);
    for (size_t i = 0; i < batch.clean_ref.size(); ++i) {
      terms.mag =
          ad::add(tape, terms.mag, mag_loss(tape, ops, batch.clean_ref[i], batch.clean_rec[i]));
    }
  } else {
    terms.mag = Tensor<T>::scalar(T(0));
  }
  for (size_t i = 0; i < batch.bir_ref.size(); ++i) {
    auto li = ir_loss(tape, batch.bir_ref[i], batch.bir_rec[i]);
    terms.ir = i == 0 ? li : ad::add(tape, terms.ir, li);
  }
  terms.total = ad::add(tape, ad::add(tape, terms.mel, terms.mag), terms.ir);
  return terms;
}

namespace detail {

// mean over sub-discriminator score maps of mean(max(0, 1 - sign * score))
template <typename T>
Tensor<T> hinge_mean(Tape<T>* tape, const std::vector<Tensor<T>>& scores, T sign) {
  require(!scores.empty(), "hinge: no discriminator scores");
  Tensor<T> acc;
  for (size_t i = 0; i < scores.size(); ++i) {
    auto margin = ad::relu(tape, ad::affine(tape, scores[i], -sign, T(1)));
    auto m = ad::mean(tape, margin);
    acc = i == 0 ? m : ad::add(tape, acc, m);
  }
  return ad::scale(tape, acc, T(1) / static_cast<T>(scores.size()));
}

}  // namespace detail

// Discriminator objective: push real scores above +1 and fake scores below
// -1, averaged over sub-discriminators. The fake branches must be detached
// by the caller so no gradient reaches the generator.
template <typename T>
Tensor<T> disc_loss(Tape<T>* tape, const std::vector<Tensor<T>>& real_binaural,
                    const std::vector<Tensor<T>>& fake_binaural,
                    const std::vector<std::vector<Tensor<T>>>& real_cleans,
                    const std::vector<std::vector<Tensor<T>>>& fake_cleans) {
  require(real_cleans.size() == fake_cleans.size(), "disc_loss: speaker count mismatch");
  auto total = ad::add(tape, detail::hinge_mean(tape, real_binaural, T(1)),
                       detail::hinge_mean(tape, fake_binaural, T(-1)));
  for (size_t i = 0; i < real_cleans.size(); ++i) {
    total = ad::add(tape, total, detail::hinge_mean(tape, real_cleans[i], T(1)));
    total = ad::add(tape, total, detail::hinge_mean(tape, fake_cleans[i], T(-1)));
  }
  return total;
}

// Generator-side adversarial objective: push the scores of the
// reconstructions above +1.
template <typename T>
Tensor<T> adv_loss(Tape<T>* tape, const std::vector<Tensor<T>>& fake_binaural,
                   const std::vector<std::vector<Tensor<T>>>& fake_cleans) {
  auto total = detail::hinge_mean(tape, fake_binaural, T(1));
  for (const auto& speaker_scores : fake_cleans) {
    total = ad::add(tape, total, detail::hinge_mean(tape, speaker_scores, T(1)));
  }
  return total;
}

// total = metric + lambda_adv * adv + lambda_vq * vq. Pass an undefined adv
// tensor in the first training stage (no adversarial term).
template <typename T>
Tensor<T> gen_loss(Tape<T>* tape, const Tensor<T>& metric_total, const Tensor<T>& adv,
                   const Tensor<T>& vq_commit, T lambda_adv, T lambda_vq) {
  Tensor<T> total = metric_total;
  if (adv.defined()) total = ad::add(tape, total, ad::scale(tape, adv, lambda_adv));
  if (vq_commit.defined()) total = ad::add(tape, total, ad::scale(tape, vq_commit, lambda_vq));
  return total;
}

// One JSON line per optimization step.
struct LossReport {
  int64_t step = 0;
  double mel = 0.0;
  double mag = 0.0;
  double ir = 0.0;
  double metric = 0.0;
  double adv = 0.0;
  double disc = 0.0;
  double vq = 0.0;
  double gen = 0.0;

  std::string to_json_line() const;
};

inline std::string LossReport::to_json_line() const {
  std::ostringstream os;
  os.precision(17);
  os << "{\"step\":" << step << ",\"mel\":" << mel << ",\"mag\":" << mag << ",\"ir\":" << ir
     << ",\"metric\":" << metric << ",\"adv\":" << adv << ",\"disc\":" << disc << ",\"vq\":" << vq
     << ",\"gen\":" << gen << "}";
  return os.str();
}

}  // namespace banc::loss

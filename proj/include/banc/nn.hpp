//
//  nn.hpp — parameter registry and the layer zoo: causal convolutions,
//  batch norm, residual units, encoder/decoder blocks, residual vector
//  quantizer and the period/scale discriminators.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "banc/autodiff.hpp"
#include "banc/rng.hpp"

namespace banc::nn {

using ad::Tape;
using ad::Tensor;

// Owns every named tensor of a model. Layers register parameters at
// construction; the registration order is the serialization order, and each
// parameter draws its initializer stream from (seed, registration index).
template <typename T>
class Registry {
 public:
  struct Entry {
    std::string name;
    std::string group;
    Tensor<T> tensor;
    bool trainable = true;
  };

  explicit Registry(uint64_t seed) : seed_(seed) {}

  Tensor<T>& kaiming(const std::string& group, const std::string& name,
                     std::vector<int64_t> shape, int64_t fan_in) {
    Tensor<T> t(shape);
    Rng rng = rng_for(seed_, 0x9a1a, entries_.size());
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) {
      t.data()[i] = static_cast<T>(rng.uniform(-bound, bound));
    }
    return push(group, name, std::move(t), true);
  }

  Tensor<T>& constant(const std::string& group, const std::string& name,
                      std::vector<int64_t> shape, T value, bool trainable) {
    return push(group, name, Tensor<T>::full(std::move(shape), value), trainable);
  }

  Tensor<T>& normal(const std::string& group, const std::string& name,
                    std::vector<int64_t> shape, double stddev, bool trainable) {
    Tensor<T> t(shape);
    Rng rng = rng_for(seed_, 0x9a1a, entries_.size());
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<T>(stddev * rng.normal());
    return push(group, name, std::move(t), trainable);
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  Entry* find(const std::string& name) {
    for (auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  uint64_t seed() const { return seed_; }

 private:
  Tensor<T>& push(const std::string& group, const std::string& name, Tensor<T> t, bool trainable) {
    require(find(name) == nullptr, "registry: duplicate parameter name ", name);
    t.set_requires_grad(trainable);
    entries_.push_back(Entry{name, group, std::move(t), trainable});
    return entries_.back().tensor;
  }

  uint64_t seed_;
  std::vector<Entry> entries_;
};

template <typename T>
struct Conv1d {
  Tensor<T> weight;  // [out, in, kernel]
  Tensor<T> bias;
  int stride = 1;
  int dilation = 1;

  Conv1d() = default;
  Conv1d(Registry<T>& reg, const std::string& group, const std::string& name, int64_t cin,
         int64_t cout, int64_t k, int stride_ = 1, int dilation_ = 1, bool zero_init = false)
      : stride(stride_), dilation(dilation_) {
    require(static_cast<int64_t>(dilation_) * (k - 1) >= stride_ - 1,
            "layer ", name, ": kernel ", k, " too short for stride ", stride_);
    if (zero_init) {
      weight = reg.constant(group, name + ".weight", {cout, cin, k}, T(0), true);
    } else {
      weight = reg.kaiming(group, name + ".weight", {cout, cin, k}, cin * k);
    }
    bias = reg.constant(group, name + ".bias", {cout}, T(0), true);
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    return ad::conv1d_causal(tape, x, weight, bias, stride, dilation);
  }
};

template <typename T>
struct ConvTranspose1d {
  Tensor<T> weight;  // [in, out, kernel]
  Tensor<T> bias;
  int stride = 1;

  ConvTranspose1d() = default;
  ConvTranspose1d(Registry<T>& reg, const std::string& group, const std::string& name,
                  int64_t cin, int64_t cout, int64_t k, int stride_)
      : stride(stride_) {
    weight = reg.kaiming(group, name + ".weight", {cin, cout, k}, cin * k);
    bias = reg.constant(group, name + ".bias", {cout}, T(0), true);
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    return ad::conv_transpose1d_causal(tape, x, weight, bias, stride);
  }
};

template <typename T>
struct BatchNorm1d {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  bool frozen = false;  // frozen -> always running stats, no updates

  BatchNorm1d() = default;
  BatchNorm1d(Registry<T>& reg, const std::string& group, const std::string& name, int64_t c) {
    gamma = reg.constant(group, name + ".gamma", {c}, T(1), true);
    beta = reg.constant(group, name + ".beta", {c}, T(0), true);
    running_mean = reg.constant(group, name + ".running_mean", {c}, T(0), false);
    running_var = reg.constant(group, name + ".running_var", {c}, T(1), false);
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool training) {
    return ad::batch_norm1d(tape, x, gamma, beta, running_mean, running_var,
                            training && !frozen);
  }
};

// Dilated conv (K=7) + 1x1 conv with a skip connection; channel-preserving.
template <typename T>
struct ResidualUnit {
  Conv1d<T> dilated;
  Conv1d<T> pointwise;

  ResidualUnit() = default;
  ResidualUnit(Registry<T>& reg, const std::string& group, const std::string& name, int64_t c,
               int dilation)
      : dilated(reg, group, name + ".dilated", c, c, 7, 1, dilation),
        pointwise(reg, group, name + ".pointwise", c, c, 1, 1) {}

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    auto h = ad::elu(tape, x);
    h = dilated.forward(tape, h);
    h = ad::elu(tape, h);
    h = pointwise.forward(tape, h);
    return ad::add(tape, x, h);
  }
};

// Encoder block: three residual units (dilations 1, 3, 9) followed by a
// downsampling conv K = 2S that doubles the channel count.
template <typename T>
struct EncoderBlock {
  std::vector<ResidualUnit<T>> units;
  Conv1d<T> down;

  EncoderBlock() = default;
  EncoderBlock(Registry<T>& reg, const std::string& group, const std::string& name, int64_t cin,
               int stride) {
    int dil = 1;
    for (int u = 0; u < 3; ++u) {
      units.emplace_back(reg, group, name + ".ru" + std::to_string(u), cin, dil);
      dil *= 3;
    }
    down = Conv1d<T>(reg, group, name + ".down", cin, 2 * cin, 2 * stride, stride);
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (const auto& u : units) h = u.forward(tape, h);
    h = ad::elu(tape, h);
    return down.forward(tape, h);
  }
};

// Decoder block: transposed conv K = 2S halving the channel count, then
// three residual units.
template <typename T>
struct DecoderBlock {
  ConvTranspose1d<T> up;
  std::vector<ResidualUnit<T>> units;

  DecoderBlock() = default;
  DecoderBlock(Registry<T>& reg, const std::string& group, const std::string& name, int64_t cin,
               int stride) {
    up = ConvTranspose1d<T>(reg, group, name + ".up", cin, cin / 2, 2 * stride, stride);
    int dil = 1;
    for (int u = 0; u < 3; ++u) {
      units.emplace_back(reg, group, name + ".ru" + std::to_string(u), cin / 2, dil);
      dil *= 3;
    }
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    auto h = ad::elu(tape, x);
    h = up.forward(tape, h);
    for (const auto& u : units) h = u.forward(tape, h);
    return h;
  }
};

// Residual vector quantizer with EMA codebook learning. Stage q quantizes
// the residual left by stages < q against its own codebook; the decoder sees
// the sum of the selected codewords through a straight-through estimator.
template <typename T>
struct Rvq {
  int num_stages = 0;
  int codebook_size = 0;
  int dim = 0;
  T decay = T(0.99);
  T eps = T(1e-5);
  bool frozen = false;

  Tensor<T> codebooks;  // [stage, size, dim]
  Tensor<T> ema_count;  // [stage, size]
  Tensor<T> ema_sum;    // [stage, size, dim]

  Rvq() = default;
  Rvq(Registry<T>& reg, const std::string& group, const std::string& name, int num_stages_,
      int codebook_size_, int dim_)
      : num_stages(num_stages_), codebook_size(codebook_size_), dim(dim_) {
    codebooks = reg.normal(group, name + ".codebooks", {num_stages, codebook_size, dim}, 0.3,
                           false);
    ema_count = reg.constant(group, name + ".ema_count", {num_stages, codebook_size}, T(1),
                             false);
    ema_sum = reg.normal(group, name + ".ema_sum", {num_stages, codebook_size, dim}, 0.0, false);
    // Start the EMA averages consistent with the codebooks (count 1 each).
    for (int64_t i = 0; i < codebooks.numel(); ++i) ema_sum.data()[i] = codebooks.data()[i];
  }

  struct Result {
    std::vector<uint16_t> indices;  // [batch][frame][stage]
    Tensor<T> quantized;            // straight-through tensor [B, dim, T]
    Tensor<T> commit;               // scalar
  };

  // latent: [B, dim, T]. In training mode the codebooks move toward the
  // assigned inputs by EMA and dead codes are reseeded from the batch.
  Result quantize(Tape<T>* tape, const Tensor<T>& latent, bool training, Rng* reseed_rng) {
    require(latent.rank() == 3 && latent.size(1) == dim, "rvq: latent must be [B, ", dim, ", T]");
    const int64_t B = latent.size(0), Tn = latent.size(2);
    const int64_t n_vec = B * Tn;

    std::vector<uint16_t> indices(n_vec * num_stages);
    std::vector<T> qvals(latent.numel(), T(0));
    // Stage inputs (residuals) and assignments for the EMA update.
    std::vector<std::vector<T>> stage_inputs(num_stages);
    if (training && !frozen) {
      for (auto& v : stage_inputs) v.reserve(n_vec * dim);
    }

    std::vector<T> residual(dim);
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t t = 0; t < Tn; ++t) {
        for (int d = 0; d < dim; ++d) residual[d] = latent.data()[(b * dim + d) * Tn + t];
        for (int q = 0; q < num_stages; ++q) {
          if (training && !frozen) {
            stage_inputs[q].insert(stage_inputs[q].end(), residual.begin(), residual.end());
          }
          const T* table = codebooks.data() + static_cast<int64_t>(q) * codebook_size * dim;
          int best = 0;
          T best_d = std::numeric_limits<T>::max();
          for (int j = 0; j < codebook_size; ++j) {
            const T* cw = table + static_cast<int64_t>(j) * dim;
            T dist = T(0);
            for (int d = 0; d < dim; ++d) {
              const T diff = residual[d] - cw[d];
              dist += diff * diff;
            }
            if (dist < best_d) {
              best_d = dist;
              best = j;
            }
          }
          indices[(b * Tn + t) * num_stages + q] = static_cast<uint16_t>(best);
          const T* cw = table + static_cast<int64_t>(best) * dim;
          for (int d = 0; d < dim; ++d) {
            residual[d] -= cw[d];
            qvals[(b * dim + d) * Tn + t] += cw[d];
          }
        }
      }
    }

    if (training && !frozen) {
      ema_update(stage_inputs, indices, n_vec, reseed_rng);
    }

    Tensor<T> q_const = Tensor<T>::from(latent.shape(), std::move(qvals));
    Result res;
    res.indices = std::move(indices);
    res.commit = ad::mse_loss(tape, latent, q_const);
    res.quantized = ad::straight_through(tape, latent, q_const);
    return res;
  }

  // Sum of the addressed codewords.
  Tensor<T> dequantize(const std::vector<uint16_t>& indices, int64_t B, int64_t Tn) const {
    require(static_cast<int64_t>(indices.size()) == B * Tn * num_stages,
            "rvq: index count mismatch");
    Tensor<T> out({B, dim, Tn});
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t t = 0; t < Tn; ++t) {
        for (int q = 0; q < num_stages; ++q) {
          const uint16_t j = indices[(b * Tn + t) * num_stages + q];
          require(j < codebook_size, "rvq: index ", j, " out of range");
          const T* cw = codebooks.data() + (static_cast<int64_t>(q) * codebook_size + j) * dim;
          for (int d = 0; d < dim; ++d) out.data()[(b * dim + d) * Tn + t] += cw[d];
        }
      }
    }
    return out;
  }

 private:
  void ema_update(const std::vector<std::vector<T>>& stage_inputs,
                  const std::vector<uint16_t>& indices, int64_t n_vec, Rng* reseed_rng) {
    for (int q = 0; q < num_stages; ++q) {
      std::vector<double> counts(codebook_size, 0.0);
      std::vector<double> sums(static_cast<size_t>(codebook_size) * dim, 0.0);
      for (int64_t v = 0; v < n_vec; ++v) {
        const uint16_t j = indices[v * num_stages + q];
        counts[j] += 1.0;
        const T* in = stage_inputs[q].data() + v * dim;
        double* dst = sums.data() + static_cast<int64_t>(j) * dim;
        for (int d = 0; d < dim; ++d) dst[d] += in[d];
      }
      T* cnt = ema_count.data() + static_cast<int64_t>(q) * codebook_size;
      T* avg = ema_sum.data() + static_cast<int64_t>(q) * codebook_size * dim;
      T* table = codebooks.data() + static_cast<int64_t>(q) * codebook_size * dim;
      double total = 0.0;
      for (int j = 0; j < codebook_size; ++j) {
        cnt[j] = decay * cnt[j] + (T(1) - decay) * static_cast<T>(counts[j]);
        total += cnt[j];
        for (int d = 0; d < dim; ++d) {
          avg[j * dim + d] =
              decay * avg[j * dim + d] + (T(1) - decay) * static_cast<T>(sums[j * dim + d]);
        }
      }
      for (int j = 0; j < codebook_size; ++j) {
        if (cnt[j] < T(1)) {
          // Dead code: reseed from a batch vector of this stage.
          const int64_t pick = reseed_rng ? static_cast<int64_t>(reseed_rng->below(n_vec)) : 0;
          const T* in = stage_inputs[q].data() + pick * dim;
          cnt[j] = T(1);
          for (int d = 0; d < dim; ++d) {
            avg[j * dim + d] = in[d];
            table[j * dim + d] = in[d];
          }
          continue;
        }
        const T smoothed = (cnt[j] + eps) / (static_cast<T>(total) + codebook_size * eps) *
                           static_cast<T>(total);
        for (int d = 0; d < dim; ++d) table[j * dim + d] = avg[j * dim + d] / smoothed;
      }
    }
  }
};

// One period sub-discriminator: the signal is decimated into `period`
// phases stacked on the batch axis, then run through a strided conv stack.
template <typename T>
struct PeriodDiscriminator {
  int period;
  std::vector<Conv1d<T>> convs;
  Conv1d<T> out;

  PeriodDiscriminator() = default;
  PeriodDiscriminator(Registry<T>& reg, const std::string& group, const std::string& name,
                      int64_t in_channels, int period_)
      : period(period_) {
    const int64_t ladder[3] = {4, 16, 64};
    int64_t c = in_channels;
    for (int i = 0; i < 3; ++i) {
      convs.emplace_back(reg, group, name + ".conv" + std::to_string(i), c, ladder[i], 5, 1);
      c = ladder[i];
    }
    out = Conv1d<T>(reg, group, name + ".out", c, 1, 3, 1, 1, /*zero_init=*/true);
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    const int64_t L = x.size(2);
    const int64_t rem = L % period;
    Tensor<T> h = rem ? ad::pad_last(tape, x, 0, period - rem) : x;
    h = ad::fold_period(tape, h, period);
    // Strided pooling between convs keeps the stack short but scoped.
    for (const auto& c : convs) {
      h = c.forward(tape, h);
      h = ad::leaky_relu(tape, h, T(0.2));
      if (h.size(2) >= 6) h = ad::avg_pool1d(tape, h, 3, 3);
    }
    return out.forward(tape, h);
  }
};

// One scale sub-discriminator operating on an average-pooled signal.
template <typename T>
struct ScaleDiscriminator {
  int pools;
  std::vector<Conv1d<T>> convs;
  Conv1d<T> out;

  ScaleDiscriminator() = default;
  ScaleDiscriminator(Registry<T>& reg, const std::string& group, const std::string& name,
                     int64_t in_channels, int pools_)
      : pools(pools_) {
    const int64_t ladder[3] = {4, 16, 64};
    int64_t c = in_channels;
    for (int i = 0; i < 3; ++i) {
      convs.emplace_back(reg, group, name + ".conv" + std::to_string(i), c, ladder[i], 15, 1);
      c = ladder[i];
    }
    out = Conv1d<T>(reg, group, name + ".out", c, 1, 3, 1, 1, /*zero_init=*/true);
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (int p = 0; p < pools; ++p) h = ad::avg_pool1d(tape, h, 2, 2);
    for (const auto& c : convs) {
      h = c.forward(tape, h);
      h = ad::leaky_relu(tape, h, T(0.2));
      if (h.size(2) >= 4) h = ad::avg_pool1d(tape, h, 4, 4);
    }
    return out.forward(tape, h);
  }
};

// Multi-period (2,3,5,7,11) + multi-scale (x1, x2, x4) discriminator.
// Final layers start at zero, so an untrained discriminator scores 0.
template <typename T>
struct Discriminator {
  std::vector<PeriodDiscriminator<T>> periods;
  std::vector<ScaleDiscriminator<T>> scales;

  Discriminator() = default;
  Discriminator(Registry<T>& reg, const std::string& group, int64_t in_channels) {
    int pi = 0;
    for (int p : {2, 3, 5, 7, 11}) {
      periods.emplace_back(reg, group, group + ".period" + std::to_string(p), in_channels, p);
      ++pi;
    }
    for (int s = 0; s < 3; ++s) {
      scales.emplace_back(reg, group, group + ".scale" + std::to_string(s), in_channels, s);
    }
  }

  std::vector<Tensor<T>> forward(Tape<T>* tape, const Tensor<T>& x) const {
    std::vector<Tensor<T>> scores;
    for (const auto& p : periods) scores.push_back(p.forward(tape, x));
    for (const auto& s : scales) scores.push_back(s.forward(tape, x));
    return scores;
  }
};

}  // namespace banc::nn

//
//  train.hpp — Adam optimizer, dataset cache, and the two-stage training
//  schedule: metric-only end-to-end training first, then adversarial
//  fine-tuning of the decoders against frozen analysis blocks.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "banc/checkpoint.hpp"
#include "banc/datasynth.hpp"
#include "banc/losses.hpp"
#include "banc/model.hpp"

namespace banc::train {

template <typename T>
class Adam {
 public:
  Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.98), T eps = T(1e-9))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void add(const std::string& name, ad::Tensor<T> param) {
    names_.push_back(name);
    params_.push_back(std::move(param));
    m_.emplace_back(params_.back().numel(), T(0));
    v_.emplace_back(params_.back().numel(), T(0));
  }

  size_t size() const { return params_.size(); }
  int64_t step_count() const { return t_; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      const T* g = p.grad();
      T* w = p.data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (int64_t j = 0; j < p.numel(); ++j) {
        require(std::isfinite(g[j]), "adam: non-finite gradient in ", names_[i], " at step ",
                t_, " (element ", j, ")");
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  // State snapshot for checkpointing.
  void append_state(const std::string& tag, std::vector<NamedTensor>& out) const {
    out.push_back({"optim." + tag + ".step", {1}, {static_cast<float>(t_)}});
    for (size_t i = 0; i < params_.size(); ++i) {
      NamedTensor m{"optim." + tag + "." + names_[i] + ".m", params_[i].shape(), {}};
      NamedTensor v{"optim." + tag + "." + names_[i] + ".v", params_[i].shape(), {}};
      m.data.assign(m_[i].begin(), m_[i].end());
      v.data.assign(v_[i].begin(), v_[i].end());
      out.push_back(std::move(m));
      out.push_back(std::move(v));
    }
  }

  void restore_state(const std::string& tag,
                     const std::map<std::string, const NamedTensor*>& index) {
    auto it = index.find("optim." + tag + ".step");
    require(it != index.end(), "checkpoint: missing optimizer state for ", tag);
    t_ = static_cast<int64_t>(it->second->data[0]);
    for (size_t i = 0; i < params_.size(); ++i) {
      for (auto [suffix, dst] : {std::pair{".m", &m_[i]}, std::pair{".v", &v_[i]}}) {
        auto jt = index.find("optim." + tag + "." + names_[i] + suffix);
        require(jt != index.end(), "checkpoint: missing moment ", suffix, " for ", names_[i]);
        require(static_cast<int64_t>(jt->second->data.size()) == params_[i].numel(),
                "checkpoint: moment size mismatch for ", names_[i]);
        dst->assign(jt->second->data.begin(), jt->second->data.end());
      }
    }
  }

 private:
  T lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<std::string> names_;
  std::vector<ad::Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
};

// One-shot Adam update over raw vectors (unit-test surface).
template <typename T>
void adam_step(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& m,
               std::vector<T>& v, int64_t t, T lr, T beta1 = T(0.9), T beta2 = T(0.98),
               T eps = T(1e-9)) {
  require(param.size() == grad.size() && param.size() == m.size() && param.size() == v.size(),
          "adam_step: size mismatch");
  const T bc1 = T(1) - std::pow(beta1, static_cast<T>(t));
  const T bc2 = T(1) - std::pow(beta2, static_cast<T>(t));
  for (size_t j = 0; j < param.size(); ++j) {
    require(std::isfinite(grad[j]), "adam_step: non-finite gradient at element ", j);
    m[j] = beta1 * m[j] + (T(1) - beta1) * grad[j];
    v[j] = beta2 * v[j] + (T(1) - beta2) * grad[j] * grad[j];
    param[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
  }
}

// Loads model tensors (parameters, buffers, quantizer state) by name from a
// checkpoint, ignoring any optimizer entries alongside them.
template <typename T>
void load_model(model::Model<T>& m, const std::string& path) {
  auto tensors = read_tensors(path);
  std::map<std::string, const NamedTensor*> index;
  for (const auto& t : tensors) index[t.name] = &t;
  for (auto& e : m.registry().entries()) {
    auto it = index.find(e.name);
    require(it != index.end(), "checkpoint: missing tensor ", e.name, " in ", path);
    require(static_cast<int64_t>(it->second->data.size()) == e.tensor.numel(),
            "checkpoint: size mismatch for ", e.name);
    for (int64_t i = 0; i < e.tensor.numel(); ++i) {
      e.tensor.data()[i] = static_cast<T>(it->second->data[i]);
    }
  }
}

// In-memory training split.
template <typename T>
struct Dataset {
  struct Item {
    std::vector<T> mix;                    // [2][L] row-major
    std::vector<std::vector<T>> cleans;    // per speaker, [L]
    std::vector<std::vector<T>> birs;      // per speaker, [2][L_ir] row-major
  };
  int speakers = 1;
  int sample_rate = 0;
  int64_t chunk = 0;
  int64_t ir_len = 0;
  std::vector<Item> items;

  static Dataset load(const std::string& root, const synth::DatasetManifest& manifest,
                      const std::string& split) {
    namespace fs = std::filesystem;
    Dataset ds;
    ds.speakers = manifest.speakers;
    ds.sample_rate = manifest.sample_rate;
    for (const auto& rec : manifest.items) {
      if (rec.split != split) continue;
      Item item;
      AudioBuffer mix = wav_read((fs::path(root) / rec.mix).string());
      ds.chunk = mix.frames();
      item.mix.resize(2 * ds.chunk);
      for (int c = 0; c < 2; ++c) {
        for (int64_t i = 0; i < ds.chunk; ++i) {
          item.mix[c * ds.chunk + i] = static_cast<T>(mix.samples[c][i]);
        }
      }
      for (const auto& cpath : rec.cleans) {
        AudioBuffer clean = wav_read((fs::path(root) / cpath).string());
        std::vector<T> v(clean.frames());
        for (size_t i = 0; i < clean.frames(); ++i) v[i] = static_cast<T>(clean.samples[0][i]);
        item.cleans.push_back(std::move(v));
      }
      for (const auto& bpath : rec.birs) {
        AudioBuffer bir = wav_read((fs::path(root) / bpath).string());
        ds.ir_len = bir.frames();
        std::vector<T> v(2 * ds.ir_len);
        for (int c = 0; c < 2; ++c) {
          for (int64_t i = 0; i < ds.ir_len; ++i) {
            v[c * ds.ir_len + i] = static_cast<T>(bir.samples[c][i]);
          }
        }
        item.birs.push_back(std::move(v));
      }
      ds.items.push_back(std::move(item));
    }
    require(!ds.items.empty(), "dataset: split '", split, "' is empty");
    return ds;
  }
};

struct TrainPlan {
  int64_t stage1_steps = 300;
  int64_t stage2_steps = 100;
  double lr_gen = 1e-4;
  double lr_disc = 2e-4;
  int batch_size = 4;
  uint64_t seed = 1;

  void validate() const {
    require(stage1_steps > 0 && stage2_steps > 0, "plan: step counts must be positive");
    require(batch_size > 0, "plan: batch size must be positive");
  }
};

template <typename T>
struct StageResult {
  std::vector<loss::LossReport> reports;
  std::string checkpoint_path;
};

template <typename T>
class Trainer {
 public:
  using Hook = std::function<void(int64_t step, model::Model<T>&)>;

  Trainer(model::Model<T>& model, Dataset<T> data, TrainPlan plan, std::string out_dir)
      : model_(model),
        data_(std::move(data)),
        plan_(plan),
        out_dir_(std::move(out_dir)),
        spectral_(loss::SpectralSettings{}, model.config().sample_rate) {
    plan_.validate();
    require(data_.speakers == model.config().speakers,
            "trainer: dataset has ", data_.speakers, " speakers, model expects ",
            model.config().speakers);
    require(data_.chunk == model.config().chunk_samples(), "trainer: dataset chunk ",
            data_.chunk, " differs from model chunk ", model.config().chunk_samples());
    std::filesystem::create_directories(out_dir_);
  }

  // End-to-end training on the metric plus codebook commitment objective.
  StageResult<T> run_stage1(bool resume = false, const Hook& after_backward = {}) {
    const std::string stage_dir = out_dir_ + "/stage1";
    std::filesystem::create_directories(stage_dir);
    const std::string ckpt = stage_dir + "/checkpoint.banckpt";

    Adam<T> gen(static_cast<T>(plan_.lr_gen));
    attach_generator_params(gen);

    int64_t start_step = 0;
    if (resume) {
      start_step = load_state(ckpt, &gen, "gen", nullptr);
    }
    std::ofstream log(stage_dir + "/loss_log.jsonl", resume ? std::ios::app : std::ios::trunc);

    model_.set_training(true);
    for (auto& e : model_.registry().entries()) e.tensor.zero_grad();
    StageResult<T> result;
    for (int64_t step = start_step; step < plan_.stage1_steps; ++step) {
      ad::Tape<T> tape;
      Batch batch = make_batch(step);
      Rng reseed = rng_for(plan_.seed, 0xe3a, step);
      auto fwd = model_.forward(&tape, batch.mix, &reseed);
      auto terms = metric_terms(&tape, batch, fwd);
      auto total = loss::gen_loss(&tape, terms.total, ad::Tensor<T>(), fwd.vq_commit, T(0),
                                  static_cast<T>(model_.config().lambda_vq));
      require(std::isfinite(static_cast<double>(total.item())), "stage1: loss diverged at step ",
              step);
      gen.zero_grad();
      tape.backward(total);
      if (after_backward) after_backward(step, model_);
      gen.step();

      loss::LossReport report;
      report.step = step + 1;
      report.mel = terms.mel.item();
      report.mag = terms.mag.item();
      report.ir = terms.ir.item();
      report.metric = terms.total.item();
      report.vq = fwd.vq_commit.item();
      report.gen = total.item();
      log << report.to_json_line() << "\n";
      result.reports.push_back(report);
    }
    log.flush();
    save_state(ckpt, &gen, "gen", nullptr, plan_.stage1_steps, "stage1");
    result.checkpoint_path = ckpt;
    return result;
  }

  // Adversarial stage: the analysis side (encoders, projectors, quantizers)
  // is frozen; critics and decoders alternate updates each iteration.
  StageResult<T> run_stage2(const Hook& after_gen_backward = {}) {
    const std::string stage1_ckpt = out_dir_ + "/stage1/checkpoint.banckpt";
    require(std::filesystem::exists(stage1_ckpt),
            "stage2: missing stage-1 checkpoint at ", stage1_ckpt);
    load_model_tensors(stage1_ckpt);

    const std::string stage_dir = out_dir_ + "/stage2";
    std::filesystem::create_directories(stage_dir);
    const std::string ckpt = stage_dir + "/checkpoint.banckpt";

    for (const auto& group : model::Model<T>::analysis_groups()) model_.freeze_group(group);

    Adam<T> gen(static_cast<T>(plan_.lr_gen));
    attach_generator_params(gen);  // only unfrozen generator groups remain
    Adam<T> disc(static_cast<T>(plan_.lr_disc));
    attach_disc_params(disc);

    std::ofstream log(stage_dir + "/loss_log.jsonl", std::ios::trunc);
    model_.set_training(true);
    for (auto& e : model_.registry().entries()) e.tensor.zero_grad();
    StageResult<T> result;
    for (int64_t step = 0; step < plan_.stage2_steps; ++step) {
      ad::Tape<T> tape;
      Batch batch = make_batch(plan_.stage1_steps + step);
      auto fwd = model_.forward(&tape, batch.mix, nullptr);
      auto terms = metric_terms(&tape, batch, fwd);

      // Critic update against detached reconstructions.
      auto real_b = model_.discriminate_binaural(&tape, batch.mix);
      auto fake_b_detached = model_.discriminate_binaural(&tape, fwd.binaural.detach());
      std::vector<std::vector<ad::Tensor<T>>> real_s, fake_s_detached;
      for (int s = 0; s < data_.speakers; ++s) {
        real_s.push_back(model_.discriminate_clean(&tape, batch.cleans[s]));
        fake_s_detached.push_back(model_.discriminate_clean(&tape, fwd.cleans[s].detach()));
      }
      auto d_loss = loss::disc_loss(&tape, real_b, fake_b_detached, real_s, fake_s_detached);
      disc.zero_grad();
      tape.backward(d_loss);
      disc.step();

      // Generator update against the refreshed critics.
      auto adv = model_.with_frozen_discriminators([&] {
        auto fake_b = model_.discriminate_binaural(&tape, fwd.binaural);
        std::vector<std::vector<ad::Tensor<T>>> fake_s;
        for (int s = 0; s < data_.speakers; ++s) {
          fake_s.push_back(model_.discriminate_clean(&tape, fwd.cleans[s]));
        }
        return loss::adv_loss(&tape, fake_b, fake_s);
      });
      auto total = loss::gen_loss(&tape, terms.total, adv, fwd.vq_commit,
                                  static_cast<T>(model_.config().lambda_adv),
                                  static_cast<T>(model_.config().lambda_vq));
      require(std::isfinite(static_cast<double>(total.item())), "stage2: loss diverged at step ",
              step);
      gen.zero_grad();
      tape.backward(total);
      if (after_gen_backward) after_gen_backward(step, model_);
      gen.step();

      loss::LossReport report;
      report.step = step + 1;
      report.mel = terms.mel.item();
      report.mag = terms.mag.item();
      report.ir = terms.ir.item();
      report.metric = terms.total.item();
      report.adv = adv.item();
      report.disc = d_loss.item();
      report.vq = fwd.vq_commit.item();
      report.gen = total.item();
      log << report.to_json_line() << "\n";
      result.reports.push_back(report);
    }
    log.flush();
    save_state(ckpt, &gen, "gen2", &disc, plan_.stage2_steps, "stage2");
    result.checkpoint_path = ckpt;
    return result;
  }

  void load_model_tensors(const std::string& path) { load_model(model_, path); }

  model::Model<T>& model() { return model_; }
  const TrainPlan& plan() const { return plan_; }

 private:
  struct Batch {
    ad::Tensor<T> mix;                      // [B, 2, L]
    std::vector<ad::Tensor<T>> cleans;      // per speaker [B, 1, L]
    std::vector<ad::Tensor<T>> birs;        // per speaker [B, 2, L_ir]
  };

  // Item order is a pure function of (seed, step): a fresh Fisher-Yates
  // permutation per epoch, consumed batch by batch.
  std::vector<size_t> batch_indices(int64_t step) const {
    const size_t n = data_.items.size();
    std::vector<size_t> out;
    for (int k = 0; k < plan_.batch_size; ++k) {
      const int64_t flat = step * plan_.batch_size + k;
      const int64_t epoch = flat / static_cast<int64_t>(n);
      const int64_t pos = flat % static_cast<int64_t>(n);
      std::vector<size_t> perm(n);
      for (size_t i = 0; i < n; ++i) perm[i] = i;
      Rng rng = rng_for(plan_.seed, 0x5a1e, static_cast<uint64_t>(epoch));
      for (size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      out.push_back(perm[pos]);
    }
    return out;
  }

  Batch make_batch(int64_t step) const {
    const auto idx = batch_indices(step);
    const int64_t B = plan_.batch_size;
    Batch batch;
    batch.mix = ad::Tensor<T>({B, 2, data_.chunk});
    for (int64_t b = 0; b < B; ++b) {
      const auto& item = data_.items[idx[b]];
      std::copy(item.mix.begin(), item.mix.end(), batch.mix.data() + b * 2 * data_.chunk);
    }
    for (int s = 0; s < data_.speakers; ++s) {
      ad::Tensor<T> clean({B, 1, data_.chunk});
      ad::Tensor<T> bir({B, 2, data_.ir_len});
      for (int64_t b = 0; b < B; ++b) {
        const auto& item = data_.items[idx[b]];
        std::copy(item.cleans[s].begin(), item.cleans[s].end(),
                  clean.data() + b * data_.chunk);
        std::copy(item.birs[s].begin(), item.birs[s].end(), bir.data() + b * 2 * data_.ir_len);
      }
      batch.cleans.push_back(std::move(clean));
      batch.birs.push_back(std::move(bir));
    }
    return batch;
  }

  loss::MetricTerms<T> metric_terms(ad::Tape<T>* tape, const Batch& batch,
                                    const typename model::Model<T>::Forward& fwd) {
    loss::MetricBatch<T> mb;
    mb.binaural_ref = batch.mix;
    mb.binaural_rec = fwd.binaural;
    mb.clean_ref = batch.cleans;
    mb.clean_rec = fwd.cleans;
    mb.bir_ref = batch.birs;
    mb.bir_rec = fwd.birs;
    return loss::metric_loss(tape, spectral_, mb, model_.config().use_mag_loss);
  }

  void attach_generator_params(Adam<T>& opt) {
    for (auto& e : model_.registry().entries()) {
      if (!e.trainable || !e.tensor.requires_grad()) continue;
      if (e.group == "disc_binaural" || e.group == "disc_clean") continue;
      opt.add(e.name, e.tensor);
    }
  }

  void attach_disc_params(Adam<T>& opt) {
    for (auto& e : model_.registry().entries()) {
      if (!e.trainable || !e.tensor.requires_grad()) continue;
      if (e.group != "disc_binaural" && e.group != "disc_clean") continue;
      opt.add(e.name, e.tensor);
    }
  }

  void save_state(const std::string& path, Adam<T>* gen, const std::string& gen_tag,
                  Adam<T>* disc, int64_t step, const std::string& stage) {
    std::vector<NamedTensor> tensors;
    for (const auto& e : model_.registry().entries()) {
      NamedTensor t{e.name, e.tensor.shape(), {}};
      t.data.resize(e.tensor.numel());
      for (int64_t i = 0; i < e.tensor.numel(); ++i) {
        t.data[i] = static_cast<float>(e.tensor.data()[i]);
      }
      tensors.push_back(std::move(t));
    }
    if (gen) gen->append_state(gen_tag, tensors);
    if (disc) disc->append_state("disc", tensors);
    tensors.push_back({"trainer.step", {1}, {static_cast<float>(step)}});
    write_tensors(path, tensors);

    nlohmann::json latest{{"stage", stage},
                          {"checkpoint", stage + "/checkpoint.banckpt"},
                          {"step", step}};
    std::ofstream out(out_dir_ + "/latest.json", std::ios::trunc);
    out << latest.dump(2) << "\n";
  }

  int64_t load_state(const std::string& path, Adam<T>* gen, const std::string& gen_tag,
                     Adam<T>* disc) {
    auto tensors = read_tensors(path);
    std::map<std::string, const NamedTensor*> index;
    for (const auto& t : tensors) index[t.name] = &t;
    for (auto& e : model_.registry().entries()) {
      auto it = index.find(e.name);
      require(it != index.end(), "checkpoint: missing tensor ", e.name, " in ", path);
      for (int64_t i = 0; i < e.tensor.numel(); ++i) {
        e.tensor.data()[i] = static_cast<T>(it->second->data[i]);
      }
    }
    if (gen) gen->restore_state(gen_tag, index);
    if (disc) disc->restore_state("disc", index);
    auto it = index.find("trainer.step");
    require(it != index.end(), "checkpoint: missing step counter in ", path);
    return static_cast<int64_t>(it->second->data[0]);
  }

  model::Model<T>& model_;
  Dataset<T> data_;
  TrainPlan plan_;
  std::string out_dir_;
  loss::SpectralOps<T> spectral_;
};

}  // namespace banc::train

//
//  banc.cpp — command-line front end: dataset synthesis, training, encoding,
//  decoding, evaluation, stream inspection and the gradient suite.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "banc/codec.hpp"
#include "banc/gradsuite.hpp"
#include "banc/metrics.hpp"
#include "banc/train.hpp"

namespace fs = std::filesystem;
using namespace banc;

namespace {

struct CommonOptions {
  std::string config_path;
  std::string profile = "desk";
  int speakers = 0;   // 0 = keep profile/config value
  uint64_t seed = 0;  // 0 = keep
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--config", opt.config_path, "model config JSON (overrides --profile)");
  cmd->add_option("--profile", opt.profile, "model profile: reference or desk")
      ->check(CLI::IsMember({"reference", "desk"}));
  cmd->add_option("--speakers", opt.speakers, "speaker count override")
      ->check(CLI::IsMember({1, 2}));
  cmd->add_option("--seed", opt.seed, "seed override");
}

model::ModelConfig resolve_config(const CommonOptions& opt) {
  model::ModelConfig cfg;
  if (!opt.config_path.empty()) {
    cfg = model::config_from_file(opt.config_path);
  } else if (opt.profile == "reference") {
    cfg = model::reference_config();
  } else {
    cfg = model::desk_config();
  }
  if (opt.speakers != 0) cfg.speakers = opt.speakers;
  if (opt.seed != 0) cfg.seed = opt.seed;
  cfg.validate();
  log_info("effective config: ", model::config_to_json(cfg));
  return cfg;
}

std::vector<std::string> wav_stems(const std::string& dir) {
  std::vector<std::string> stems;
  require(fs::is_directory(dir), "eval: ", dir, " is not a directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".wav") {
      stems.push_back(entry.path().stem().string());
    }
  }
  std::sort(stems.begin(), stems.end());
  require(!stems.empty(), "eval: no .wav files in ", dir);
  return stems;
}

std::vector<Bir> load_bir_set(const std::string& dir, const std::string& stem) {
  std::vector<Bir> birs;
  const fs::path single = fs::path(dir) / (stem + ".wav");
  if (fs::exists(single)) {
    birs.push_back(Bir::from_buffer(wav_read(single.string())));
    return birs;
  }
  for (int s = 1;; ++s) {
    const fs::path speaker = fs::path(dir) / (stem + "_" + std::to_string(s) + ".wav");
    if (!fs::exists(speaker)) break;
    birs.push_back(Bir::from_buffer(wav_read(speaker.string())));
  }
  require(!birs.empty(), "eval: no impulse responses for item ", stem, " in ", dir);
  return birs;
}

int run(int argc, char** argv) {
  CLI::App app{"binaural neural speech codec toolkit"};
  app.require_subcommand(1);

  // --- synth -------------------------------------------------------------
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out;
  std::string synth_profile = "desk";
  std::string synth_clean_dir;
  int synth_speakers = 1;
  int synth_rate = 6000;
  double synth_chunk = 2.0;
  uint64_t synth_seed = 1;
  int64_t synth_train = -1, synth_valid = -1, synth_test = -1;
  synth_cmd->add_option("-o,--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--profile", synth_profile, "dataset profile: desk or reference")
      ->check(CLI::IsMember({"desk", "reference"}));
  synth_cmd->add_option("--speakers", synth_speakers, "speakers per item")
      ->check(CLI::IsMember({1, 2}));
  synth_cmd->add_option("--sample-rate", synth_rate, "sample rate in Hz");
  synth_cmd->add_option("--chunk-seconds", synth_chunk, "item duration in seconds");
  synth_cmd->add_option("--seed", synth_seed, "generation seed");
  synth_cmd->add_option("--clean-dir", synth_clean_dir, "directory of source .wav files");
  synth_cmd->add_option("--train-items", synth_train, "override training item count");
  synth_cmd->add_option("--valid-items", synth_valid, "override validation item count");
  synth_cmd->add_option("--test-items", synth_test, "override test item count");
  synth_cmd->callback([&] {
    synth::BuildOptions opt;
    opt.profile = synth_profile == "reference" ? synth::reference_profile()
                                               : synth::desk_profile();
    if (synth_train >= 0) opt.profile.train = synth_train;
    if (synth_valid >= 0) opt.profile.valid = synth_valid;
    if (synth_test >= 0) opt.profile.test = synth_test;
    opt.sample_rate = synth_rate;
    opt.chunk_seconds = synth_chunk;
    opt.speakers = synth_speakers;
    opt.seed = synth_seed;
    opt.clean_dir = synth_clean_dir;
    auto manifest = synth::build_dataset(opt, synth_out);
    std::cout << "wrote " << manifest.items.size() << " items under " << synth_out << "\n";
  });

  // --- train ---------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "run the two-stage training schedule");
  CommonOptions train_common;
  add_common(train_cmd, train_common);
  std::string train_data, train_out;
  std::string train_stage = "all";
  train::TrainPlan plan;
  bool train_resume = false;
  train_cmd->add_option("--data", train_data, "dataset directory (with manifest.jsonl)")
      ->required();
  train_cmd->add_option("-o,--out", train_out, "run directory for logs and checkpoints")
      ->required();
  train_cmd->add_option("--stage", train_stage, "1, 2 or all")
      ->check(CLI::IsMember({"1", "2", "all"}));
  train_cmd->add_option("--stage1-steps", plan.stage1_steps, "stage-1 iterations");
  train_cmd->add_option("--stage2-steps", plan.stage2_steps, "stage-2 iterations");
  train_cmd->add_option("--batch", plan.batch_size, "batch size");
  train_cmd->add_option("--lr-gen", plan.lr_gen, "generator learning rate");
  train_cmd->add_option("--lr-disc", plan.lr_disc, "discriminator learning rate");
  train_cmd->add_flag("--resume", train_resume, "resume stage 1 from its checkpoint");
  train_cmd->callback([&] {
    auto cfg = resolve_config(train_common);
    auto manifest = synth::load_manifest((fs::path(train_data) / "manifest.jsonl").string());
    require(manifest.sample_rate == cfg.sample_rate, "train: dataset rate ",
            manifest.sample_rate, " differs from model rate ", cfg.sample_rate);
    cfg.speakers = manifest.speakers;
    if (train_common.seed != 0) plan.seed = train_common.seed;
    auto dataset = train::Dataset<float>::load(train_data, manifest, "train");
    model::Model<float> model(cfg);
    fs::create_directories(train_out);
    {
      std::ofstream cfg_out(fs::path(train_out) / "config.json");
      cfg_out << model::config_to_json(cfg) << "\n";
    }
    train::Trainer<float> trainer(model, dataset, plan, train_out);
    if (train_stage == "1" || train_stage == "all") {
      auto r = trainer.run_stage1(train_resume);
      std::cout << "stage1 done: metric " << r.reports.front().metric << " -> "
                << r.reports.back().metric << "\n";
    }
    if (train_stage == "2" || train_stage == "all") {
      auto r = trainer.run_stage2();
      std::cout << "stage2 done: disc " << r.reports.front().disc << " -> "
                << r.reports.back().disc << "\n";
    }
  });

  // --- encode --------------------------------------------------------------
  auto* encode_cmd = app.add_subcommand("encode", "compress a binaural wav into a .banc stream");
  CommonOptions enc_common;
  add_common(encode_cmd, enc_common);
  std::string enc_in, enc_out, enc_ckpt;
  encode_cmd->add_option("input", enc_in, "input .wav (binaural)")->required();
  encode_cmd->add_option("-o,--out", enc_out, "output .banc path")->required();
  encode_cmd->add_option("--ckpt", enc_ckpt, "model checkpoint");
  encode_cmd->callback([&] {
    auto cfg = resolve_config(enc_common);
    model::Model<float> model(cfg);
    if (!enc_ckpt.empty()) train::load_model(model, enc_ckpt);
    AudioBuffer input = wav_read(enc_in);
    auto [header, chunks] = codec::encode_buffer(model, input);
    bits::write_stream(enc_out, header, chunks);
    std::cout << "wrote " << enc_out << " (" << chunks.size() << " chunks, "
              << bits::bandwidth_bps(header) << " bps)\n";
  });

  // --- decode --------------------------------------------------------------
  auto* decode_cmd = app.add_subcommand("decode", "decode a .banc stream");
  CommonOptions dec_common;
  add_common(decode_cmd, dec_common);
  std::string dec_in, dec_out, dec_ckpt;
  decode_cmd->add_option("input", dec_in, "input .banc stream")->required();
  decode_cmd->add_option("-o,--out", dec_out, "output directory")->required();
  decode_cmd->add_option("--ckpt", dec_ckpt, "model checkpoint");
  decode_cmd->callback([&] {
    auto cfg = resolve_config(dec_common);
    auto [header, chunks] = bits::read_stream(dec_in);
    cfg.speakers = header.speakers;
    model::Model<float> model(cfg);
    if (!dec_ckpt.empty()) train::load_model(model, dec_ckpt);
    auto decoded = codec::decode_stream(model, header, chunks);
    fs::create_directories(dec_out);
    wav_write((fs::path(dec_out) / "mix.wav").string(), decoded.binaural);
    for (size_t s = 0; s < decoded.cleans.size(); ++s) {
      wav_write((fs::path(dec_out) / ("clean_" + std::to_string(s + 1) + ".wav")).string(),
                decoded.cleans[s]);
      wav_write((fs::path(dec_out) / ("bir_" + std::to_string(s + 1) + ".wav")).string(),
                decoded.birs[s].to_buffer());
    }
    std::cout << "wrote mix.wav plus " << decoded.cleans.size()
              << " clean/impulse-response pairs under " << dec_out << "\n";
  });

  // --- eval ----------------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("eval", "spatial and room-acoustic error report");
  std::string eval_ref, eval_rec, eval_bir_ref, eval_bir_rec, eval_out;
  eval_cmd->add_option("--ref", eval_ref, "reference binaural directory")->required();
  eval_cmd->add_option("--rec", eval_rec, "reconstructed binaural directory")->required();
  eval_cmd->add_option("--bir-ref", eval_bir_ref, "reference impulse-response directory")
      ->required();
  eval_cmd->add_option("--bir-rec", eval_bir_rec, "reconstructed impulse-response directory")
      ->required();
  eval_cmd->add_option("-o,--out", eval_out, "output basename (.csv and .json)");
  eval_cmd->callback([&] {
    std::vector<metrics::EvalItem> items;
    for (const auto& stem : wav_stems(eval_ref)) {
      metrics::EvalItem item;
      item.id = stem;
      item.binaural_ref = wav_read((fs::path(eval_ref) / (stem + ".wav")).string());
      item.binaural_rec = wav_read((fs::path(eval_rec) / (stem + ".wav")).string());
      item.bir_ref = load_bir_set(eval_bir_ref, stem);
      item.bir_rec = load_bir_set(eval_bir_rec, stem);
      items.push_back(std::move(item));
    }
    auto report = metrics::eval_report(items);
    if (eval_out.empty()) {
      std::cout << report.to_csv();
    } else {
      std::ofstream csv(eval_out + ".csv");
      csv << report.to_csv();
      std::ofstream js(eval_out + ".json");
      js << report.to_json() << "\n";
      std::cout << "wrote " << eval_out << ".csv and " << eval_out << ".json\n";
    }
  });

  // --- info ----------------------------------------------------------------
  auto* info_cmd = app.add_subcommand("info", "print stream header and bandwidth");
  std::string info_in;
  info_cmd->add_option("input", info_in, "input .banc stream")->required();
  info_cmd->callback([&] {
    auto header = bits::read_header(info_in);
    auto report = bits::compression_report(header);
    std::cout << "sample_rate:    " << header.sample_rate << " Hz\n"
              << "speakers:       " << static_cast<int>(header.speakers) << "\n"
              << "codebooks:      " << static_cast<int>(header.num_codebooks) << " x "
              << header.codebook_size << "\n"
              << "bits_per_frame: " << header.bits_per_frame() << "\n"
              << "factors:        " << header.speech_factor << " (speech), " << header.ir_factor
              << " (impulse response)\n"
              << "chunk_samples:  " << header.chunk_samples << "\n"
              << "total_samples:  " << header.total_samples << "\n"
              << "bandwidth:      " << bits::bandwidth_bps(header) << " bps\n"
              << "dual-mono comparator: " << report.comparator << " bps (savings "
              << 100.0 * report.savings_fraction << "%)\n"
              << "pcm16 ratio:    " << report.bit_ratio << "x\n"
              << "stride-mean ratio:   " << report.stride_mean_ratio << "x\n";
  });

  // --- gradcheck -------------------------------------------------------------
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  int grad_probes = 1;
  grad_cmd->add_option("--probes", grad_probes, "probes per tensor for the full-graph check");
  grad_cmd->callback([&] {
    bool all_pass = true;
    double worst = 0.0;
    for (const auto& r : gradsuite::run_op_checks()) {
      all_pass = all_pass && r.pass;
      worst = std::max(worst, r.rel_err);
      if (!r.pass) std::cout << "FAIL " << r.name << " rel_err " << r.rel_err << "\n";
    }
    std::cout << "operator checks: worst rel_err " << worst << "\n";
    auto full = gradsuite::run_full_graph_check(grad_probes);
    std::cout << (full.pass ? "pass " : "FAIL ") << full.name << " rel_err " << full.rel_err
              << " (tolerance " << full.tolerance << ")\n";
    all_pass = all_pass && full.pass;
    require(all_pass, "gradcheck: tolerances exceeded");
    std::cout << "gradcheck: all checks passed\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

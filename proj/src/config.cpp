//
//  config.cpp — model configuration validation, profiles and JSON I/O.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#include <fstream>
#include <json.hpp>

#include "banc/model.hpp"

namespace banc::model {

using nlohmann::json;

void ModelConfig::validate() const {
  require(sample_rate > 0, "config: sample_rate must be positive");
  require(chunk_seconds > 0, "config: chunk_seconds must be positive");
  require(speakers == 1 || speakers == 2, "config: speakers must be 1 or 2");
  require(base_channels >= 1, "config: base_channels must be >= 1");
  require(code_dim >= 1, "config: code_dim must be >= 1");
  require(codebooks >= 1, "config: codebooks must be >= 1");
  require(codebook_size >= 2 && (codebook_size & (codebook_size - 1)) == 0,
          "config: codebook_size must be a power of two");
  require(ir_encoder_kernels.size() == ir_strides.size(),
          "config: ir_encoder_kernels and ir_strides must align");
  require(speech_factor() == speech_decoder_factor(),
          "config: speech stride product ", speech_factor(),
          " differs from decoder product ", speech_decoder_factor());
  require(chunk_samples() % speech_factor() == 0, "config: chunk (", chunk_samples(),
          " samples) not divisible by the speech factor ", speech_factor());
  require(chunk_samples() % ir_factor() == 0, "config: chunk (", chunk_samples(),
          " samples) not divisible by the IR factor ", ir_factor());
  require((1 << bits_per_index()) == codebook_size, "config: codebook_size must be 2^bits");
  // The channel ladder must stay integral through the decoders.
  int64_t ch = latent_dim();
  for (size_t i = 0; i < ir_decoder_strides.size(); ++i) {
    require(ch % 2 == 0, "config: IR decoder channel ladder breaks at block ", i);
    ch /= 2;
  }
}

ModelConfig reference_config() { return ModelConfig{}; }

// Full stride geometry at 1/8 of the reference rate, channels and codebooks
// shrunk so a training run fits on a CPU. The stride products (300 and 6000)
// are untouched, so all bit-budget arithmetic carries over.
ModelConfig desk_config() {
  ModelConfig cfg;
  cfg.sample_rate = 6000;
  cfg.base_channels = 4;
  cfg.codebooks = 4;
  cfg.codebook_size = 256;
  cfg.ir_encoder_kernels = {12001, 41, 41};
  cfg.scale = 0.125;
  return cfg;
}

// Smallest geometry that keeps both stride products; used by the gradient
// suite where every forward is finite-differenced many times.
ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.sample_rate = 3000;
  cfg.base_channels = 4;  // floor set by the six channel halvings of the IR decoder
  cfg.code_dim = 4;
  cfg.codebooks = 2;
  cfg.codebook_size = 32;  // enough entries to snap one codeword per toy frame
  cfg.ir_encoder_kernels = {1501, 9, 9};
  cfg.scale = 1.0 / 16.0;
  return cfg;
}

std::string config_to_json(const ModelConfig& cfg) {
  json j;
  j["sample_rate"] = cfg.sample_rate;
  j["chunk_seconds"] = cfg.chunk_seconds;
  j["speakers"] = cfg.speakers;
  j["speech_strides"] = cfg.speech_strides;
  j["ir_strides"] = cfg.ir_strides;
  j["speech_decoder_strides"] = cfg.speech_decoder_strides;
  j["ir_decoder_strides"] = cfg.ir_decoder_strides;
  j["ir_encoder_kernels"] = cfg.ir_encoder_kernels;
  j["base_channels"] = cfg.base_channels;
  j["code_dim"] = cfg.code_dim;
  j["codebooks"] = cfg.codebooks;
  j["codebook_size"] = cfg.codebook_size;
  j["scale"] = cfg.scale;
  j["use_mag_loss"] = cfg.use_mag_loss;
  j["lambda_adv"] = cfg.lambda_adv;
  j["lambda_vq"] = cfg.lambda_vq;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    fail("config: invalid JSON: ", e.what());
  }
  ModelConfig cfg;
  static const std::set<std::string> known{
      "sample_rate",   "chunk_seconds",          "speakers",           "speech_strides",
      "ir_strides",    "speech_decoder_strides", "ir_decoder_strides", "ir_encoder_kernels",
      "base_channels", "code_dim",               "codebooks",          "codebook_size",
      "scale",         "use_mag_loss",           "lambda_adv",         "lambda_vq",
      "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(known.count(it.key()) != 0, "config: unknown key '", it.key(), "'");
  }
  if (j.contains("sample_rate")) cfg.sample_rate = j["sample_rate"];
  if (j.contains("chunk_seconds")) cfg.chunk_seconds = j["chunk_seconds"];
  if (j.contains("speakers")) cfg.speakers = j["speakers"];
  if (j.contains("speech_strides")) cfg.speech_strides = j["speech_strides"].get<std::vector<int>>();
  if (j.contains("ir_strides")) cfg.ir_strides = j["ir_strides"].get<std::vector<int>>();
  if (j.contains("speech_decoder_strides")) {
    cfg.speech_decoder_strides = j["speech_decoder_strides"].get<std::vector<int>>();
  }
  if (j.contains("ir_decoder_strides")) {
    cfg.ir_decoder_strides = j["ir_decoder_strides"].get<std::vector<int>>();
  }
  if (j.contains("ir_encoder_kernels")) {
    cfg.ir_encoder_kernels = j["ir_encoder_kernels"].get<std::vector<int>>();
  }
  if (j.contains("base_channels")) cfg.base_channels = j["base_channels"];
  if (j.contains("code_dim")) cfg.code_dim = j["code_dim"];
  if (j.contains("codebooks")) cfg.codebooks = j["codebooks"];
  if (j.contains("codebook_size")) cfg.codebook_size = j["codebook_size"];
  if (j.contains("scale")) cfg.scale = j["scale"];
  if (j.contains("use_mag_loss")) cfg.use_mag_loss = j["use_mag_loss"];
  if (j.contains("lambda_adv")) cfg.lambda_adv = j["lambda_adv"];
  if (j.contains("lambda_vq")) cfg.lambda_vq = j["lambda_vq"];
  if (j.contains("seed")) cfg.seed = j["seed"];
  cfg.validate();
  return cfg;
}

ModelConfig config_from_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open ", path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_json(text);
}

}  // namespace banc::model

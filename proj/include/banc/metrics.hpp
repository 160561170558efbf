//
//  metrics.hpp — spatial and room-acoustic evaluation: GCC-PHAT interaural
//  time difference, interaural level differences, Schroeder decay analysis
//  (T60, DRR, EDT, center time) and dataset-level reports.
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "banc/audio.hpp"

namespace banc::metrics {

// Interaural time difference in seconds via phase-transform weighted
// cross-correlation with parabolic sub-sample refinement. The sign is the
// arrival-time difference left minus right: delaying the right channel by
// d samples yields -d / sample_rate.
// max_lag_s = 0 searches every lag.
double gcc_phat_itd(const std::vector<double>& left, const std::vector<double>& right,
                    int sample_rate, double max_lag_s = 0.0);

// |ITD(ref) - ITD(rec)| in seconds for two-channel buffers.
double itd_error(const AudioBuffer& ref, const AudioBuffer& rec);

// Per-channel level error |20 log10(||rec||^2 / ||ref||^2)| in dB,
// energies (squared norms) inside the log.
std::pair<double, double> ild_errors(const AudioBuffer& ref, const AudioBuffer& rec);

// Backward-integrated energy decay curve in dB, floored at -120.
// edc[0] == 0 by construction.
std::vector<double> schroeder_edc(const std::vector<double>& ir);

struct AcousticParams {
  std::optional<double> t60;     // seconds; unset when the decay range is never reached
  std::optional<double> edt;     // seconds
  std::optional<double> drr_db;  // capped at +100 when the late field is empty
  double cte_ms = 0.0;           // energy-weighted center time
  double c50_db = 0.0;           // early(50 ms)/late ratio, capped at +100
};

AcousticParams channel_acoustics(const std::vector<double>& ir, int sample_rate);
std::pair<AcousticParams, AcousticParams> acoustic_params(const Bir& bir);

// One evaluated item: spatial errors of the binaural pair plus per-channel
// absolute acoustic-parameter errors averaged over speakers.
struct ItemReport {
  std::string id;
  double e_itd_ms = 0.0;
  double e_ildl_db = 0.0;
  double e_ildr_db = 0.0;
  // [0] = left, [1] = right
  std::optional<double> t60_ms[2];
  std::optional<double> drr_db[2];
  std::optional<double> edt_ms[2];
  std::optional<double> cte_ms[2];
};

struct EvalItem {
  std::string id;
  AudioBuffer binaural_ref;
  AudioBuffer binaural_rec;
  std::vector<Bir> bir_ref;  // one per speaker
  std::vector<Bir> bir_rec;
};

struct EvalReport {
  std::vector<ItemReport> items;
  ItemReport mean;  // id == "mean"; optional columns average the defined items

  std::string to_csv() const;
  std::string to_json() const;
};

EvalReport eval_report(const std::vector<EvalItem>& items);

}  // namespace banc::metrics

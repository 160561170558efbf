//
//  metrics.cpp
//
//  Distributed under the Apache License, Version 2.0.
//  See the accompanying LICENSE file or http://www.apache.org/licenses/LICENSE-2.0.html
//
#include "banc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <json.hpp>

#include "banc/fft.hpp"

namespace banc::metrics {

namespace {

constexpr double kEdcFloorDb = -120.0;
constexpr double kDrrCapDb = 100.0;

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

// Least-squares slope of y over x.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < n; ++i) {
    num += (x[i] - mx) * (y[i] - my);
    den += (x[i] - mx) * (x[i] - mx);
  }
  return den > 0.0 ? num / den : 0.0;
}

// First time (seconds) the EDC falls to `level`, linearly interpolated.
std::optional<double> crossing_time(const std::vector<double>& edc, double level,
                                    int sample_rate) {
  for (size_t i = 0; i < edc.size(); ++i) {
    if (edc[i] <= level) {
      if (i == 0) return 0.0;
      const double prev = edc[i - 1];
      const double frac = prev > edc[i] ? (prev - level) / (prev - edc[i]) : 0.0;
      return (static_cast<double>(i - 1) + frac) / sample_rate;
    }
  }
  return std::nullopt;
}

}  // namespace

double gcc_phat_itd(const std::vector<double>& left, const std::vector<double>& right,
                    int sample_rate, double max_lag_s) {
  require(left.size() == right.size() && !left.empty(), "itd: channel lengths differ or empty");
  require(sample_rate > 0, "itd: bad sample rate");
  require(energy(left) > 0.0 && energy(right) > 0.0, "itd: zero-energy channel");

  const size_t n = next_pow2(2 * left.size());
  std::vector<std::complex<double>> fl(n, {0.0, 0.0}), fr(n, {0.0, 0.0});
  for (size_t i = 0; i < left.size(); ++i) {
    fl[i] = {left[i], 0.0};
    fr[i] = {right[i], 0.0};
  }
  fft_inplace(fl, false);
  fft_inplace(fr, false);
  // Cross-power spectrum whitened by its magnitude.
  for (size_t i = 0; i < n; ++i) {
    std::complex<double> g = fl[i] * std::conj(fr[i]);
    const double mag = std::abs(g);
    fl[i] = mag > 1e-300 ? g / mag : std::complex<double>(0.0, 0.0);
  }
  fft_inplace(fl, true);

  const int64_t L = static_cast<int64_t>(left.size());
  int64_t max_lag = L - 1;
  if (max_lag_s > 0.0) {
    max_lag = std::min<int64_t>(max_lag, static_cast<int64_t>(max_lag_s * sample_rate));
  }
  auto corr_at = [&](int64_t lag) {
    const size_t idx = lag >= 0 ? static_cast<size_t>(lag) : n + lag;
    return fl[idx].real();
  };
  int64_t best_lag = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (int64_t lag = -max_lag; lag <= max_lag; ++lag) {
    const double v = corr_at(lag);
    if (v > best) {
      best = v;
      best_lag = lag;
    }
  }
  // Parabolic interpolation around the peak.
  const double ym = corr_at(best_lag - 1);
  const double y0 = corr_at(best_lag);
  const double yp = corr_at(best_lag + 1);
  const double denom = ym - 2.0 * y0 + yp;
  double delta = 0.0;
  if (std::abs(denom) > 1e-300) delta = 0.5 * (ym - yp) / denom;
  delta = std::clamp(delta, -0.5, 0.5);
  return (static_cast<double>(best_lag) + delta) / sample_rate;
}

double itd_error(const AudioBuffer& ref, const AudioBuffer& rec) {
  require(ref.channels() == 2 && rec.channels() == 2, "itd_error: buffers must be binaural");
  require(ref.sample_rate == rec.sample_rate, "itd_error: sample rate mismatch");
  const double a = gcc_phat_itd(ref.samples[0], ref.samples[1], ref.sample_rate);
  const double b = gcc_phat_itd(rec.samples[0], rec.samples[1], rec.sample_rate);
  return std::abs(a - b);
}

std::pair<double, double> ild_errors(const AudioBuffer& ref, const AudioBuffer& rec) {
  require(ref.channels() == 2 && rec.channels() == 2, "ild_errors: buffers must be binaural");
  require(ref.frames() == rec.frames(), "ild_errors: length mismatch");
  double out[2];
  for (int c = 0; c < 2; ++c) {
    const double er = energy(ref.samples[c]);
    require(er > 0.0, "ild_errors: zero reference energy in channel ", c);
    const double ec = std::max(energy(rec.samples[c]), 1e-300);
    out[c] = std::abs(20.0 * std::log10(ec / er));
  }
  return {out[0], out[1]};
}

std::vector<double> schroeder_edc(const std::vector<double>& ir) {
  require(!ir.empty(), "edc: empty impulse response");
  const double total = energy(ir);
  require(total > 0.0, "edc: zero-energy impulse response");
  std::vector<double> edc(ir.size());
  double tail = 0.0;
  for (size_t i = ir.size(); i-- > 0;) {
    tail += ir[i] * ir[i];
    edc[i] = tail;
  }
  for (auto& v : edc) {
    v = std::max(10.0 * std::log10(std::max(v / total, 0.0)), kEdcFloorDb);
  }
  return edc;
}

AcousticParams channel_acoustics(const std::vector<double>& ir, int sample_rate) {
  require(sample_rate > 0, "acoustics: bad sample rate");
  AcousticParams p;
  const auto edc = schroeder_edc(ir);
  const double total = energy(ir);

  // Reverberation time from the -5 .. -25 dB span, extrapolated to -60.
  const auto t5 = crossing_time(edc, -5.0, sample_rate);
  const auto t25 = crossing_time(edc, -25.0, sample_rate);
  if (t5 && t25 && *t25 > *t5) {
    const size_t i5 = static_cast<size_t>(*t5 * sample_rate);
    const size_t i25 = std::min(ir.size() - 1, static_cast<size_t>(*t25 * sample_rate) + 1);
    std::vector<double> ts, ys;
    for (size_t i = i5; i <= i25; ++i) {
      ts.push_back(static_cast<double>(i) / sample_rate);
      ys.push_back(edc[i]);
    }
    if (ts.size() >= 2) {
      const double slope = fit_slope(ts, ys);  // dB per second
      if (slope < 0.0) p.t60 = -60.0 / slope;
    }
  }

  // Early decay time: six times the 0 -> -10 dB crossing.
  if (auto t10 = crossing_time(edc, -10.0, sample_rate)) p.edt = 6.0 * *t10;

  // Direct-to-reverberant ratio around the strongest arrival.
  size_t peak = 0;
  double peak_abs = 0.0;
  for (size_t i = 0; i < ir.size(); ++i) {
    if (std::abs(ir[i]) > peak_abs) {
      peak_abs = std::abs(ir[i]);
      peak = i;
    }
  }
  const int64_t half = static_cast<int64_t>(0.0025 * sample_rate + 0.5);
  const int64_t lo = std::max<int64_t>(0, static_cast<int64_t>(peak) - half);
  const int64_t hi = std::min<int64_t>(ir.size() - 1, static_cast<int64_t>(peak) + half);
  double direct = 0.0;
  for (int64_t i = lo; i <= hi; ++i) direct += ir[i] * ir[i];
  const double late = total - direct;
  if (late <= 0.0 || direct / late > 1e10) {
    p.drr_db = kDrrCapDb;
  } else if (direct > 0.0) {
    p.drr_db = 10.0 * std::log10(direct / late);
  }

  // Center time (energy-weighted mean arrival) in milliseconds.
  double weighted = 0.0;
  for (size_t i = 0; i < ir.size(); ++i) {
    weighted += (static_cast<double>(i) / sample_rate) * ir[i] * ir[i];
  }
  p.cte_ms = 1000.0 * weighted / total;

  // Early-to-late energy ratio at 50 ms after the direct arrival.
  const size_t split = std::min(ir.size(), peak + static_cast<size_t>(0.05 * sample_rate));
  double early = 0.0;
  for (size_t i = 0; i < split; ++i) early += ir[i] * ir[i];
  const double late50 = total - early;
  if (late50 <= 0.0 || early / late50 > 1e10) {
    p.c50_db = kDrrCapDb;
  } else {
    p.c50_db = 10.0 * std::log10(early / late50);
  }
  return p;
}

std::pair<AcousticParams, AcousticParams> acoustic_params(const Bir& bir) {
  bir.validate();
  return {channel_acoustics(bir.left, bir.sample_rate),
          channel_acoustics(bir.right, bir.sample_rate)};
}

namespace {

std::optional<double> abs_diff(const std::optional<double>& a, const std::optional<double>& b) {
  if (a && b) return std::abs(*a - *b);
  return std::nullopt;
}

void csv_cell(std::string& out, const std::optional<double>& v) {
  char buf[64];
  if (v) {
    std::snprintf(buf, sizeof buf, ",%.6f", *v);
    out += buf;
  } else {
    out += ",undefined";
  }
}

nlohmann::json json_item(const ItemReport& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["e_itd_ms"] = r.e_itd_ms;
  j["e_ildl_db"] = r.e_ildl_db;
  j["e_ildr_db"] = r.e_ildr_db;
  const char* names[2] = {"left", "right"};
  for (int c = 0; c < 2; ++c) {
    nlohmann::json ch;
    ch["t60_ms"] = r.t60_ms[c] ? nlohmann::json(*r.t60_ms[c]) : nlohmann::json();
    ch["drr_db"] = r.drr_db[c] ? nlohmann::json(*r.drr_db[c]) : nlohmann::json();
    ch["edt_ms"] = r.edt_ms[c] ? nlohmann::json(*r.edt_ms[c]) : nlohmann::json();
    ch["cte_ms"] = r.cte_ms[c] ? nlohmann::json(*r.cte_ms[c]) : nlohmann::json();
    j[names[c]] = ch;
  }
  return j;
}

}  // namespace

EvalReport eval_report(const std::vector<EvalItem>& items) {
  require(!items.empty(), "eval_report: empty dataset");
  EvalReport report;
  for (const auto& item : items) {
    require(item.bir_ref.size() == item.bir_rec.size(), "eval_report: item ", item.id,
            " has mismatched speaker counts");
    ItemReport r;
    r.id = item.id;
    r.e_itd_ms = 1000.0 * itd_error(item.binaural_ref, item.binaural_rec);
    auto [el, er] = ild_errors(item.binaural_ref, item.binaural_rec);
    r.e_ildl_db = el;
    r.e_ildr_db = er;

    // Acoustic-parameter errors averaged over speakers, per channel.
    for (int c = 0; c < 2; ++c) {
      double t60 = 0.0, drr = 0.0, edt = 0.0, cte = 0.0;
      int nt60 = 0, ndrr = 0, nedt = 0, ncte = 0;
      for (size_t s = 0; s < item.bir_ref.size(); ++s) {
        auto pr = acoustic_params(item.bir_ref[s]);
        auto pc = acoustic_params(item.bir_rec[s]);
        const AcousticParams& a = c == 0 ? pr.first : pr.second;
        const AcousticParams& b = c == 0 ? pc.first : pc.second;
        if (auto d = abs_diff(a.t60, b.t60)) {
          t60 += 1000.0 * *d;
          ++nt60;
        }
        if (auto d = abs_diff(a.drr_db, b.drr_db)) {
          drr += *d;
          ++ndrr;
        }
        if (auto d = abs_diff(a.edt, b.edt)) {
          edt += 1000.0 * *d;
          ++nedt;
        }
        cte += std::abs(a.cte_ms - b.cte_ms);
        ++ncte;
      }
      if (nt60) r.t60_ms[c] = t60 / nt60;
      if (ndrr) r.drr_db[c] = drr / ndrr;
      if (nedt) r.edt_ms[c] = edt / nedt;
      if (ncte) r.cte_ms[c] = cte / ncte;
    }
    report.items.push_back(std::move(r));
  }

  ItemReport& m = report.mean;
  m.id = "mean";
  for (const auto& r : report.items) {
    m.e_itd_ms += r.e_itd_ms;
    m.e_ildl_db += r.e_ildl_db;
    m.e_ildr_db += r.e_ildr_db;
  }
  const double n = static_cast<double>(report.items.size());
  m.e_itd_ms /= n;
  m.e_ildl_db /= n;
  m.e_ildr_db /= n;
  for (int c = 0; c < 2; ++c) {
    double acc[4] = {0, 0, 0, 0};
    int cnt[4] = {0, 0, 0, 0};
    for (const auto& r : report.items) {
      const std::optional<double>* fields[4] = {&r.t60_ms[c], &r.drr_db[c], &r.edt_ms[c],
                                                &r.cte_ms[c]};
      for (int f = 0; f < 4; ++f) {
        if (*fields[f]) {
          acc[f] += **fields[f];
          ++cnt[f];
        }
      }
    }
    if (cnt[0]) m.t60_ms[c] = acc[0] / cnt[0];
    if (cnt[1]) m.drr_db[c] = acc[1] / cnt[1];
    if (cnt[2]) m.edt_ms[c] = acc[2] / cnt[2];
    if (cnt[3]) m.cte_ms[c] = acc[3] / cnt[3];
  }
  return report;
}

std::string EvalReport::to_csv() const {
  std::string out =
      "id,e_itd_ms,e_ildl_db,e_ildr_db,"
      "left.t60_ms,left.drr_db,left.edt_ms,left.cte_ms,"
      "right.t60_ms,right.drr_db,right.edt_ms,right.cte_ms\n";
  auto row = [&out](const ItemReport& r) {
    out += r.id;
    csv_cell(out, r.e_itd_ms);
    csv_cell(out, r.e_ildl_db);
    csv_cell(out, r.e_ildr_db);
    for (int c = 0; c < 2; ++c) {
      csv_cell(out, r.t60_ms[c]);
      csv_cell(out, r.drr_db[c]);
      csv_cell(out, r.edt_ms[c]);
      csv_cell(out, r.cte_ms[c]);
    }
    out += "\n";
  };
  for (const auto& r : items) row(r);
  row(mean);
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["items"] = nlohmann::json::array();
  for (const auto& r : items) j["items"].push_back(json_item(r));
  j["mean"] = json_item(mean);
  return j.dump(2);
}

}  // namespace banc::metrics

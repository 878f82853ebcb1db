#pragma once

// Reconstruction metrics: NMSE, Pearson correlation, SNR, STFT power-spectrum MAE,
// per-group and cumulative NMSE, and the relative Gain between two runs.

#include <algorithm>
#include <cmath>
#include <complex>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "cafe/error.hpp"
#include "cafe/montage.hpp"
#include "cafe/signal.hpp"

namespace cafe {

inline constexpr double kSnrCapDb = 120.0;

/// Error and reference energy restricted to a channel set.
struct EnergyPair {
  double error = 0.0;
  double target = 0.0;

  EnergyPair& operator+=(const EnergyPair& o) {
    error += o.error;
    target += o.target;
    return *this;
  }
  double nmse() const {
    require(target > 0.0, "nmse: target has zero energy on the evaluated channels", ErrorKind::Numeric);
    return error / target;
  }
  double snr_db() const {
    require(target > 0.0, "snr: target has zero energy on the evaluated channels", ErrorKind::Numeric);
    if (error == 0.0) return kSnrCapDb;
    return std::min(kSnrCapDb, 10.0 * std::log10(target / error));
  }
};

inline void check_pair(const SignalBlock& pred, const SignalBlock& target, const std::vector<std::size_t>& channels) {
  require(pred.channels() == target.channels() && pred.samples() == target.samples(),
          "metric: prediction and target shapes differ");
  require(!channels.empty(), "metric: empty channel set");
  for (auto c : channels) require(c < pred.channels(), "metric: channel index out of range");
}

inline EnergyPair energies(const SignalBlock& pred, const SignalBlock& target, const std::vector<std::size_t>& channels) {
  check_pair(pred, target, channels);
  EnergyPair e;
  for (auto c : channels) {
    const auto p = pred.row(c), t = target.row(c);
    for (std::size_t i = 0; i < p.size(); ++i) {
      e.error += (p[i] - t[i]) * (p[i] - t[i]);
      e.target += t[i] * t[i];
    }
  }
  return e;
}

/// ||pred - target||^2 / ||target||^2 pooled over the channel set.
inline double nmse(const SignalBlock& pred, const SignalBlock& target, const std::vector<std::size_t>& channels) {
  return energies(pred, target, channels).nmse();
}

/// Mean of per-channel NMSE (sensitivity variant; not the default pooling).
inline double nmse_per_channel_mean(const SignalBlock& pred, const SignalBlock& target,
                                    const std::vector<std::size_t>& channels) {
  double sum = 0.0;
  for (auto c : channels) sum += nmse(pred, target, {c});
  return sum / static_cast<double>(channels.size());
}

inline double snr_db(const SignalBlock& pred, const SignalBlock& target, const std::vector<std::size_t>& channels) {
  return energies(pred, target, channels).snr_db();
}

/// Per-channel Pearson correlation averaged over the channel set. A channel
/// with zero variance in either signal contributes 0 and bumps `*degenerate`.
inline double pcc(const SignalBlock& pred, const SignalBlock& target, const std::vector<std::size_t>& channels,
                  std::size_t* degenerate = nullptr) {
  check_pair(pred, target, channels);
  double total = 0.0;
  for (auto c : channels) {
    const auto p = pred.row(c), t = target.row(c);
    const double n = static_cast<double>(p.size());
    double mp = 0.0, mt = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) mp += p[i], mt += t[i];
    mp /= n;
    mt /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      sxy += (p[i] - mp) * (t[i] - mt);
      sxx += (p[i] - mp) * (p[i] - mp);
      syy += (t[i] - mt) * (t[i] - mt);
    }
    if (sxx <= 0.0 || syy <= 0.0) {
      if (degenerate) ++*degenerate;
      continue;
    }
    total += std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  }
  return total / static_cast<double>(channels.size());
}

// ---- STFT power spectra ---------------------------------------------------

struct StftConfig {
  std::size_t window = 64;
  std::size_t hop = 32;
};

namespace detail {

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

/// In-place iterative radix-2 FFT.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len)
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
        const auto u = a[i + k], v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
  }
}

}  // namespace detail

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

/// One-sided |STFT|^2 of a single row: frames x (window/2 + 1), frames without padding.
inline std::vector<std::vector<double>> power_spectrogram(std::span<const double> x, const StftConfig& cfg) {
  require(cfg.window >= 2 && cfg.hop >= 1, "stft: invalid window/hop");
  require(x.size() >= cfg.window, "stft: window longer than signal");
  const auto w = hann_window(cfg.window);
  const std::size_t frames = 1 + (x.size() - cfg.window) / cfg.hop, bins = cfg.window / 2 + 1;
  std::vector<std::vector<double>> out(frames, std::vector<double>(bins));
  std::vector<std::complex<double>> buf(cfg.window);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t i = 0; i < cfg.window; ++i) buf[i] = x[f * cfg.hop + i] * w[i];
    if (detail::is_pow2(cfg.window)) {
      detail::fft_radix2(buf);
      for (std::size_t k = 0; k < bins; ++k) out[f][k] = std::norm(buf[k]);
    } else {
      for (std::size_t k = 0; k < bins; ++k) {
        std::complex<double> s = 0.0;
        for (std::size_t i = 0; i < cfg.window; ++i)
          s += buf[i] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i) /
                                            static_cast<double>(cfg.window));
        out[f][k] = std::norm(s);
      }
    }
  }
  return out;
}

/// Mean absolute difference of power spectrograms, averaged over channels, frames and bins.
inline double spec_mae(const SignalBlock& pred, const SignalBlock& target, const std::vector<std::size_t>& channels,
                       const StftConfig& cfg = {}) {
  check_pair(pred, target, channels);
  require(pred.samples() >= cfg.window, "spec_mae: window longer than T");
  double total = 0.0;
  std::size_t count = 0;
  for (auto c : channels) {
    const auto sp = power_spectrogram(pred.row(c), cfg);
    const auto st = power_spectrogram(target.row(c), cfg);
    for (std::size_t f = 0; f < sp.size(); ++f)
      for (std::size_t k = 0; k < sp[f].size(); ++k, ++count) total += std::abs(sp[f][k] - st[f][k]);
  }
  return total / static_cast<double>(count);
}

/// Relative change in percent from `orig` to `ar`, oriented so improvement is positive.
inline double gain(double orig, double ar, bool lower_is_better) {
  require(orig != 0.0, "gain: original metric is zero");
  return 100.0 * (lower_is_better ? (orig - ar) : (ar - orig)) / orig;
}

// ---- reports --------------------------------------------------------------

struct MetricsReport {
  double nmse = 0.0;
  double pcc = 0.0;
  double snr_db = 0.0;
  double spec_mae = 0.0;
  std::vector<double> per_group_nmse;
  std::vector<double> cumulative_nmse;
  std::vector<std::size_t> evaluated;  // channel set the scalar metrics cover
  std::size_t samples = 0;
  std::size_t degenerate_pcc = 0;
};

/// Dataset-level report. NMSE/SNR pool energies over all samples; PCC and
/// Spec-MAE are averaged over samples. Per-group NMSE uses each group's own
/// channels; the cumulative curve is its prefix sum.
inline MetricsReport evaluate(const std::vector<SignalBlock>& preds, const std::vector<SignalBlock>& targets,
                              const std::vector<std::size_t>& channels, const GroupSchedule* schedule = nullptr,
                              const StftConfig& stft = {}) {
  require(!preds.empty() && preds.size() == targets.size(), "evaluate: prediction/target counts differ");
  MetricsReport r;
  r.evaluated = channels;
  r.samples = preds.size();
  EnergyPair total;
  std::vector<EnergyPair> groups(schedule ? schedule->depth() : 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    total += energies(preds[i], targets[i], channels);
    r.pcc += pcc(preds[i], targets[i], channels, &r.degenerate_pcc);
    if (targets[i].samples() >= stft.window) r.spec_mae += spec_mae(preds[i], targets[i], channels, stft);
    for (std::size_t g = 0; g < groups.size(); ++g) groups[g] += energies(preds[i], targets[i], schedule->groups[g]);
  }
  const double n = static_cast<double>(preds.size());
  r.nmse = total.nmse();
  r.snr_db = total.snr_db();
  r.pcc /= n;
  r.spec_mae /= n;
  double cum = 0.0;
  for (const auto& g : groups) {
    r.per_group_nmse.push_back(g.nmse());
    cum += r.per_group_nmse.back();
    r.cumulative_nmse.push_back(cum);
  }
  return r;
}

inline std::string fmt_metric(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

/// One JSON object per line; field order is fixed.
inline std::string report_json_line(const std::string& label, const MetricsReport& r) {
  std::ostringstream os;
  auto list = [&](const std::vector<double>& v) {
    os << '[';
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << fmt_metric(v[i]);
    os << ']';
  };
  os << "{\"label\":\"" << label << "\",\"samples\":" << r.samples << ",\"channels\":" << r.evaluated.size()
     << ",\"nmse\":" << fmt_metric(r.nmse) << ",\"pcc\":" << fmt_metric(r.pcc) << ",\"snr_db\":" << fmt_metric(r.snr_db)
     << ",\"spec_mae\":" << fmt_metric(r.spec_mae) << ",\"per_group_nmse\":";
  list(r.per_group_nmse);
  os << ",\"cumulative_nmse\":";
  list(r.cumulative_nmse);
  os << '}';
  return os.str();
}

}  // namespace cafe

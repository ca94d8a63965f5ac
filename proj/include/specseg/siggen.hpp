#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "specseg/fourier.hpp"
#include "specseg/metrics.hpp"
#include "specseg/rng.hpp"

namespace specseg {

enum class Modulation : std::uint32_t { Bpsk = 0, Qpsk, Psk8, Qam8, Qam16, Gmsk, Fsk2 };

inline constexpr std::array<Modulation, 7> kAllModulations = {
    Modulation::Bpsk, Modulation::Qpsk, Modulation::Psk8, Modulation::Qam8,
    Modulation::Qam16, Modulation::Gmsk, Modulation::Fsk2};

inline std::string to_string(Modulation m) {
  switch (m) {
    case Modulation::Bpsk: return "BPSK";
    case Modulation::Qpsk: return "QPSK";
    case Modulation::Psk8: return "8PSK";
    case Modulation::Qam8: return "8QAM";
    case Modulation::Qam16: return "16QAM";
    case Modulation::Gmsk: return "GMSK";
    case Modulation::Fsk2: return "2FSK";
  }
  fail(ErrorCode::UnsupportedModulation, "modulation tag " + std::to_string(static_cast<std::uint32_t>(m)));
}

inline Modulation parse_modulation(const std::string& s) {
  for (auto m : kAllModulations)
    if (to_string(m) == s) return m;
  fail(ErrorCode::UnsupportedModulation, "unknown modulation '" + s + "'");
}

inline Modulation modulation_from_tag(std::uint32_t tag) {
  if (tag >= kAllModulations.size()) fail(ErrorCode::UnsupportedModulation, "modulation tag " + std::to_string(tag));
  return static_cast<Modulation>(tag);
}

struct SignalSpec {
  Modulation modulation = Modulation::Bpsk;
  double bandwidth_hz = 1e6;
  double center_offset_hz = 0.0;  // f_c - f_r
  double power = 1.0;
};

struct ShapingConfig {
  double rrc_rolloff = 0.35;
  std::size_t rrc_span = 8;  // symbols
  double gmsk_bt = 0.3;
};

/// Unit-energy symbol alphabet, or empty for the frequency-keyed modulations.
inline std::vector<std::complex<double>> constellation(Modulation m) {
  using C = std::complex<double>;
  auto psk = [](int M) {
    std::vector<C> pts;
    for (int k = 0; k < M; ++k) pts.push_back(std::polar(1.0, 2.0 * std::numbers::pi * k / M));
    return pts;
  };
  switch (m) {
    case Modulation::Bpsk: return {C(1, 0), C(-1, 0)};
    case Modulation::Qpsk: {
      const double a = std::numbers::sqrt2 / 2.0;
      return {C(a, a), C(-a, a), C(-a, -a), C(a, -a)};
    }
    case Modulation::Psk8: return psk(8);
    case Modulation::Qam8: {
      // Rectangular 4x2 grid, I in {-3,-1,1,3}, Q in {-1,1}: mean energy 6.
      std::vector<C> pts;
      for (int i : {-3, -1, 1, 3})
        for (int q : {-1, 1}) pts.push_back(C(i, q) / std::sqrt(6.0));
      return pts;
    }
    case Modulation::Qam16: {
      std::vector<C> pts;
      for (int i : {-3, -1, 1, 3})
        for (int q : {-3, -1, 1, 3}) pts.push_back(C(i, q) / std::sqrt(10.0));
      return pts;
    }
    case Modulation::Gmsk:
    case Modulation::Fsk2: return {};
  }
  fail(ErrorCode::UnsupportedModulation, "modulation tag " + std::to_string(static_cast<std::uint32_t>(m)));
}

/// Root-raised-cosine pulse with unit energy per symbol period: the integral
/// of p(t)^2 over t equals T. Argument is t / T.
inline double rrc_pulse(double u, double alpha) {
  constexpr double pi = std::numbers::pi;
  if (std::abs(u) < 1e-12) return 1.0 - alpha + 4.0 * alpha / pi;
  if (alpha > 0.0 && std::abs(std::abs(u) - 1.0 / (4.0 * alpha)) < 1e-9) {
    return alpha / std::numbers::sqrt2 *
           ((1.0 + 2.0 / pi) * std::sin(pi / (4.0 * alpha)) + (1.0 - 2.0 / pi) * std::cos(pi / (4.0 * alpha)));
  }
  const double num = std::sin(pi * u * (1.0 - alpha)) + 4.0 * alpha * u * std::cos(pi * u * (1.0 + alpha));
  const double den = pi * u * (1.0 - 16.0 * alpha * alpha * u * u);
  return num / den;
}

namespace detail {

inline std::vector<std::complex<double>> shaped_symbols(Modulation m, double bw, double fs, std::size_t n,
                                                        const ShapingConfig& sc, Rng& rng) {
  const auto alphabet = constellation(m);
  const double T = (1.0 + sc.rrc_rolloff) / bw;  // occupied band (1+a)/T = bw
  const double half_span = static_cast<double>(sc.rrc_span) / 2.0;
  const double t0 = rng.uniform() * T;  // random symbol timing
  const double duration = static_cast<double>(n) / fs;
  const auto k_lo = static_cast<long>(std::floor((-t0) / T - half_span)) - 1;
  const auto k_hi = static_cast<long>(std::ceil((duration - t0) / T + half_span)) + 1;
  std::vector<std::complex<double>> sym(static_cast<std::size_t>(k_hi - k_lo + 1));
  for (auto& s : sym) s = alphabet[rng.below(alphabet.size())];

  std::vector<std::complex<double>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs - t0;
    const auto kc = static_cast<long>(std::floor(t / T));
    std::complex<double> acc{0.0, 0.0};
    for (long k = kc - static_cast<long>(half_span); k <= kc + static_cast<long>(half_span) + 1; ++k) {
      const double u = t / T - static_cast<double>(k);
      if (std::abs(u) > half_span) continue;
      acc += sym[static_cast<std::size_t>(k - k_lo)] * rrc_pulse(u, sc.rrc_rolloff);
    }
    out[i] = acc;
  }
  return out;
}

// Frequency pulse of GMSK: a unit rectangle of one bit convolved with a
// Gaussian of bandwidth-time product bt, integrating to 1/2.
inline double gmsk_frequency_pulse(double u, double bt) {
  const double k = 2.0 * std::numbers::pi * bt / std::sqrt(std::log(2.0));
  auto Q = [](double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); };
  return 0.5 * (Q(k * (u - 0.5)) - Q(k * (u + 0.5)));
}

inline std::vector<std::complex<double>> gmsk(double bw, double fs, std::size_t n, double bt, Rng& rng) {
  const double T = 1.0 / bw;  // bit rate equal to the nominal bandwidth
  const double t0 = rng.uniform() * T;
  constexpr long span = 3;
  const double duration = static_cast<double>(n) / fs;
  const long k_lo = static_cast<long>(std::floor(-t0 / T)) - span - 1;
  const long k_hi = static_cast<long>(std::ceil((duration - t0) / T)) + span + 1;
  std::vector<double> bits(static_cast<std::size_t>(k_hi - k_lo + 1));
  for (auto& b : bits) b = rng.below(2) ? 1.0 : -1.0;

  std::vector<std::complex<double>> out(n);
  double phase = 2.0 * std::numbers::pi * rng.uniform();
  const double dt = 1.0 / fs;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt - t0;
    const auto kc = static_cast<long>(std::floor(t / T));
    double freq = 0.0;  // in units of 1/T
    for (long k = kc - span; k <= kc + span; ++k) {
      freq += bits[static_cast<std::size_t>(k - k_lo)] * gmsk_frequency_pulse(t / T - static_cast<double>(k), bt);
    }
    // Modulation index 1/2: each bit advances the phase by +-pi/2.
    out[i] = std::polar(1.0, phase);
    phase += std::numbers::pi * freq * dt / T;
  }
  return out;
}

inline std::vector<std::complex<double>> fsk2(double bw, double fs, std::size_t n, Rng& rng) {
  const double dev = bw / 4.0;
  const double T = 4.0 / bw;
  const double t0 = rng.uniform() * T;
  std::vector<std::complex<double>> out(n);
  double phase = 2.0 * std::numbers::pi * rng.uniform();
  long current = std::numeric_limits<long>::min();
  double tone = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<long>(std::floor((static_cast<double>(i) / fs + t0) / T));
    if (k != current) {
      current = k;
      tone = rng.below(2) ? dev : -dev;
    }
    out[i] = std::polar(1.0, phase);
    phase += 2.0 * std::numbers::pi * tone / fs;
  }
  return out;
}

}  // namespace detail

/// Complex baseband waveform s_c[n] at unit average power (before `power`
/// scaling), without the carrier offset.
inline ComplexTensor<double> modulate(const SignalSpec& spec, std::size_t n_samples, Rng& rng,
                                      double sample_rate_hz = 20e6, const ShapingConfig& sc = {}) {
  require(n_samples >= 64, ErrorCode::ConfigInvalid, "modulate needs at least 64 samples");
  require(spec.bandwidth_hz > 0.0 && spec.bandwidth_hz <= sample_rate_hz, ErrorCode::ConfigInvalid,
          "bandwidth must be in (0, fs]");
  std::vector<std::complex<double>> x;
  switch (spec.modulation) {
    case Modulation::Bpsk:
    case Modulation::Qpsk:
    case Modulation::Psk8:
    case Modulation::Qam8:
    case Modulation::Qam16:
      x = detail::shaped_symbols(spec.modulation, spec.bandwidth_hz, sample_rate_hz, n_samples, sc, rng);
      break;
    case Modulation::Gmsk: x = detail::gmsk(spec.bandwidth_hz, sample_rate_hz, n_samples, sc.gmsk_bt, rng); break;
    case Modulation::Fsk2: x = detail::fsk2(spec.bandwidth_hz, sample_rate_hz, n_samples, rng); break;
    default: fail(ErrorCode::UnsupportedModulation, "modulation tag " + std::to_string(static_cast<int>(spec.modulation)));
  }
  const double amp = std::sqrt(spec.power);
  for (auto& v : x) v *= amp;
  return ComplexTensor<double>({n_samples}, std::move(x));
}

struct SegmentLabel {
  Segment bins;  // centered bin order, bin L/2 is the receiver center
  Modulation modulation = Modulation::Bpsk;
  double center_offset_hz = 0.0;
  double bandwidth_hz = 0.0;

  friend bool operator==(const SegmentLabel&, const SegmentLabel&) = default;
};

struct SampleRecord {
  IQFrame<float> frame;
  std::vector<SegmentLabel> labels;
  double snr_db = 0.0;
  std::uint64_t seed = 0;

  std::size_t length() const { return frame.length(); }
  std::vector<Segment> segments() const {
    std::vector<Segment> s;
    for (const auto& l : labels) s.push_back(l.bins);
    return s;
  }
};

struct ComposeConfig {
  double sample_rate_hz = 20e6;
  std::vector<double> bandwidths_hz = {0.1e6, 0.2e6, 0.5e6, 1e6, 2e6};
  double guard_hz = 0.1e6;
  std::vector<Modulation> modulations = {kAllModulations.begin(), kAllModulations.end()};
  ShapingConfig shaping{};
};

/// Bins whose centers fall inside [f_lo, f_hi] (Hz relative to the receiver
/// center). A band narrower than one bin maps to the bin nearest its center.
inline Segment band_to_bins(double f_lo, double f_hi, std::size_t L, double sample_rate_hz) {
  const double df = sample_rate_hz / static_cast<double>(L);
  const auto half = static_cast<long>(L / 2);
  long b = static_cast<long>(std::ceil(f_lo / df - 1e-9)) + half;
  long e = static_cast<long>(std::floor(f_hi / df + 1e-9)) + half;
  if (b > e) b = e = static_cast<long>(std::lround(0.5 * (f_lo + f_hi) / df)) + half;
  b = std::clamp(b, 0L, static_cast<long>(L) - 1);
  e = std::clamp(e, 0L, static_cast<long>(L) - 1);
  return {static_cast<std::size_t>(b), static_cast<std::size_t>(e)};
}

/// Clean signal sum (after SNR scaling) and noise realization of a sample,
/// both in double precision before the float32 cast.
struct ComposeTrace {
  std::vector<std::complex<double>> signal;
  std::vector<std::complex<double>> noise;
};

/// Places n signals with guard bands between them and at both band edges
/// (half a guard at each edge), draws their waveforms at equal power, scales
/// the sum against the realized noise so the sample SNR is exactly snr_db,
/// and adds complex white Gaussian noise.
inline SampleRecord compose_sample(std::size_t n_signals, double snr_db, std::size_t L, Rng& rng,
                                   const ComposeConfig& cc = {}, ComposeTrace* trace = nullptr) {
  require(n_signals >= 1 && n_signals <= 10, ErrorCode::ConfigInvalid, "n_signals must be in [1, 10]");
  require(L >= 64, ErrorCode::ConfigInvalid, "L must be >= 64");
  require(!cc.bandwidths_hz.empty() && !cc.modulations.empty(), ErrorCode::ConfigInvalid,
          "need bandwidth and modulation choices");
  const double fs = cc.sample_rate_hz;
  std::vector<SignalSpec> specs(n_signals);
  double occupied = 0.0;
  for (auto& s : specs) {
    s.modulation = cc.modulations[rng.below(cc.modulations.size())];
    s.bandwidth_hz = cc.bandwidths_hz[rng.below(cc.bandwidths_hz.size())];
    occupied += s.bandwidth_hz;
  }
  const double usable = fs - cc.guard_hz;
  const double slack = usable - occupied - cc.guard_hz * static_cast<double>(n_signals - 1);
  if (slack < 0.0) {
    fail(ErrorCode::PlacementInfeasible, std::to_string(n_signals) + " signals need " +
                                             std::to_string(occupied + cc.guard_hz * (n_signals - 1)) +
                                             " Hz, only " + std::to_string(usable) + " Hz usable");
  }
  // Uniform random gaps: sorted uniforms partition the slack.
  std::vector<double> cuts(n_signals);
  for (auto& c : cuts) c = rng.uniform() * slack;
  std::sort(cuts.begin(), cuts.end());
  rng.shuffle(specs.begin(), specs.end());
  double cursor = -usable / 2.0;
  double prev_cut = 0.0;
  for (std::size_t i = 0; i < n_signals; ++i) {
    cursor += cuts[i] - prev_cut;
    prev_cut = cuts[i];
    specs[i].center_offset_hz = cursor + specs[i].bandwidth_hz / 2.0;
    cursor += specs[i].bandwidth_hz + cc.guard_hz;
  }

  std::vector<std::complex<double>> sig(L, {0.0, 0.0});
  SampleRecord rec;
  for (const auto& s : specs) {
    const auto base = modulate(s, L, rng, fs, cc.shaping);
    const double w = 2.0 * std::numbers::pi * s.center_offset_hz / fs;
    for (std::size_t n = 0; n < L; ++n) {
      sig[n] += base[n] * std::polar(1.0, w * static_cast<double>(n));
    }
    const Segment bins = band_to_bins(s.center_offset_hz - s.bandwidth_hz / 2.0,
                                      s.center_offset_hz + s.bandwidth_hz / 2.0, L, fs);
    rec.labels.push_back({bins, s.modulation, s.center_offset_hz, s.bandwidth_hz});
  }
  std::sort(rec.labels.begin(), rec.labels.end(),
            [](const SegmentLabel& a, const SegmentLabel& b) { return a.bins < b.bins; });

  std::vector<std::complex<double>> noise(L);
  const double sd = std::sqrt(0.5);
  for (auto& v : noise) {
    const double re_part = rng.normal() * sd;
    v = {re_part, rng.normal() * sd};
  }
  double p_sig = 0.0, p_noise = 0.0;
  for (std::size_t n = 0; n < L; ++n) {
    p_sig += std::norm(sig[n]);
    p_noise += std::norm(noise[n]);
  }
  const double scale = std::sqrt(p_noise * std::pow(10.0, snr_db / 10.0) / p_sig);
  std::vector<std::complex<float>> out(L);
  for (std::size_t n = 0; n < L; ++n) out[n] = std::complex<float>(scale * sig[n] + noise[n]);

  if (trace) {
    trace->signal = sig;
    for (auto& v : trace->signal) v *= scale;
    trace->noise = noise;
  }
  rec.frame = make_frame(std::move(out), fs, 0.0);
  rec.snr_db = snr_db;
  return rec;
}

}  // namespace specseg

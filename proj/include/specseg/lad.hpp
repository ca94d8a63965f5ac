#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "specseg/fourier.hpp"
#include "specseg/metrics.hpp"

namespace specseg {

struct LadConfig {
  double lower_factor = 2.66;
  double upper_factor = 13.06;
  std::size_t min_run = 2;
  std::size_t max_iterations = 20;

  void validate() const {
    require(lower_factor > 0.0 && upper_factor >= lower_factor, ErrorCode::ConfigInvalid,
            "LAD needs upper_factor >= lower_factor > 0");
    require(min_run >= 1 && max_iterations >= 1, ErrorCode::ConfigInvalid, "LAD min_run and iterations must be >= 1");
  }
};

/// Mean of a unit exponential variable conditioned on being at most c.
inline double truncated_exponential_mean(double c) { return 1.0 - c * std::exp(-c) / -std::expm1(-c); }

/// Noise floor (mean noise power per bin) by iterated trimmed mean: average
/// the bins at or below lower_factor * floor until the kept set stops
/// changing. Noise-only bin power is exponential, so the trimmed average
/// is low by truncated_exponential_mean(lower_factor); each estimate is
/// divided by that factor so the thresholds multiply the noise mean itself.
inline double lad_noise_floor(std::span<const double> power, const LadConfig& cfg) {
  const double bias = truncated_exponential_mean(cfg.lower_factor);
  double floor = 0.0;
  for (double p : power) floor += p;
  floor /= static_cast<double>(power.size());
  std::size_t kept_prev = power.size() + 1;
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    const double cut = cfg.lower_factor * floor;
    double sum = 0.0;
    std::size_t kept = 0;
    for (double p : power) {
      if (p <= cut) {
        sum += p;
        ++kept;
      }
    }
    if (kept == 0) break;
    floor = sum / static_cast<double>(kept) / bias;
    if (kept == kept_prev) break;
    kept_prev = kept;
  }
  return floor;
}

/// Double-threshold detection on per-bin power in the given bin order.
inline std::vector<Segment> lad_detect_power(std::span<const double> power, const LadConfig& cfg = {}) {
  cfg.validate();
  require(power.size() >= 16, ErrorCode::ShapeMismatch, "LAD needs at least 16 bins");
  const double floor = lad_noise_floor(power, cfg);
  const double lo = cfg.lower_factor * floor;
  const double hi = cfg.upper_factor * floor;
  std::vector<Segment> out;
  std::size_t i = 0;
  while (i < power.size()) {
    if (!(power[i] > lo)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    bool strong = power[i] > hi;
    while (j + 1 < power.size() && power[j + 1] > lo) {
      ++j;
      strong = strong || power[j] > hi;
    }
    if (strong && j - i + 1 >= cfg.min_run) out.push_back({i, j});
    i = j + 1;
  }
  return out;
}

/// LAD on a spectrum; segments are reported in centered bin order like the
/// dataset labels.
template <Real R>
std::vector<Segment> lad_detect(const SpectrumFrame<R>& spectrum, const LadConfig& cfg = {}) {
  const auto c = centered(spectrum.coeffs);
  std::vector<double> power(c.size());
  for (std::size_t f = 0; f < c.size(); ++f) power[f] = std::norm(std::complex<double>(c[f]));
  return lad_detect_power(power, cfg);
}

}  // namespace specseg

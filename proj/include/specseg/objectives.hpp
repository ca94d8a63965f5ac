#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "specseg/error.hpp"

namespace specseg {

/// Per-bin occupancy probabilities. In real mode p_y mirrors p_x.
struct PredictedSpectrum {
  std::vector<double> p_x;
  std::vector<double> p_y;

  std::size_t size() const { return p_x.size(); }
};

/// Binary per-bin targets for the real (o_x) and imaginary (o_y) predictions.
struct OccupancyMask {
  std::vector<std::uint8_t> o_x;
  std::vector<std::uint8_t> o_y;

  std::size_t size() const { return o_x.size(); }
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> d_px;  // dL/dp_x
  std::vector<double> d_py;  // dL/dp_y (empty for single-channel losses)
};

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-7;

namespace detail {

struct TermGrad {
  double value;
  double grad;
};

// One channel of one bin of the focal loss, without the leading -alpha/2:
//   o (1-p)^g log p + (1-o) p^g log(1-p)
// and its derivative in p. The derivative is zero where the clamp is active.
inline TermGrad focal_term(double p_raw, std::uint8_t o, double gamma) {
  const double p = std::clamp(p_raw, kProbClamp, 1.0 - kProbClamp);
  const bool clamped = p != p_raw;
  double v, d;
  if (o) {
    const double q = 1.0 - p;
    const double qg = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
    const double dqg = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0);
    v = qg * std::log(p);
    d = -dqg * std::log(p) + qg / p;
  } else {
    const double pg = gamma == 0.0 ? 1.0 : std::pow(p, gamma);
    const double dpg = gamma == 0.0 ? 0.0 : gamma * std::pow(p, gamma - 1.0);
    v = pg * std::log1p(-p);
    d = dpg * std::log1p(-p) - pg / (1.0 - p);
  }
  return {v, clamped ? 0.0 : d};
}

inline void check_pair(std::size_t pred, std::size_t target, const char* what) {
  require(pred == target, ErrorCode::ShapeMismatch,
          std::string(what) + ": prediction length " + std::to_string(pred) + " vs target " + std::to_string(target));
}

}  // namespace detail

/// Complex focal loss over both prediction channels:
///   -(alpha/2) sum_f [focal(p_x, o_x) + focal(p_y, o_y)].
inline LossResult cfl(const PredictedSpectrum& pred, const OccupancyMask& target, double gamma, double alpha) {
  detail::check_pair(pred.p_x.size(), target.o_x.size(), "cfl");
  detail::check_pair(pred.p_y.size(), target.o_y.size(), "cfl");
  detail::check_pair(pred.p_x.size(), pred.p_y.size(), "cfl");
  require(gamma >= 0.0 && alpha > 0.0, ErrorCode::ConfigInvalid, "cfl needs gamma >= 0 and alpha > 0");
  const std::size_t L = pred.size();
  LossResult r{0.0, std::vector<double>(L), std::vector<double>(L)};
  const double k = -alpha / 2.0;
  for (std::size_t f = 0; f < L; ++f) {
    const auto tx = detail::focal_term(pred.p_x[f], target.o_x[f], gamma);
    const auto ty = detail::focal_term(pred.p_y[f], target.o_y[f], gamma);
    r.loss += k * (tx.value + ty.value);
    r.d_px[f] = k * tx.grad;
    r.d_py[f] = k * ty.grad;
  }
  return r;
}

/// Complex binary cross-entropy; equal to cfl with gamma = 0, alpha = 1.
inline LossResult cbce(const PredictedSpectrum& pred, const OccupancyMask& target) {
  return cfl(pred, target, 0.0, 1.0);
}

/// Real focal loss on a single probability channel: -alpha sum_f focal(p, o).
inline LossResult rfl(std::span<const double> p, std::span<const std::uint8_t> o, double gamma, double alpha) {
  detail::check_pair(p.size(), o.size(), "rfl");
  require(gamma >= 0.0 && alpha > 0.0, ErrorCode::ConfigInvalid, "rfl needs gamma >= 0 and alpha > 0");
  LossResult r{0.0, std::vector<double>(p.size()), {}};
  for (std::size_t f = 0; f < p.size(); ++f) {
    const auto t = detail::focal_term(p[f], o[f], gamma);
    r.loss += -alpha * t.value;
    r.d_px[f] = -alpha * t.grad;
  }
  return r;
}

inline LossResult rbce(std::span<const double> p, std::span<const std::uint8_t> o) { return rfl(p, o, 0.0, 1.0); }

enum class LossKind { Cfl, Cbce, Rfl, Rbce };

}  // namespace specseg

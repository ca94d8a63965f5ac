#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "specseg/error.hpp"
#include "specseg/objectives.hpp"

namespace specseg {

/// Occupied bin interval [f_b, f_e], both ends inclusive.
struct Segment {
  std::size_t f_b = 0;
  std::size_t f_e = 0;

  std::size_t length() const { return f_e - f_b + 1; }
  friend bool operator==(const Segment&, const Segment&) = default;
  friend auto operator<=>(const Segment&, const Segment&) = default;
};

/// Complex-plane rectangle: x extent from the real-part occupancy, y extent
/// from the imaginary-part occupancy. Inclusive bin indices.
struct BoxZ {
  std::size_t x_begin = 0, x_end = 0;
  std::size_t y_begin = 0, y_end = 0;

  friend bool operator==(const BoxZ&, const BoxZ&) = default;
};

/// Maximal runs of nonzero entries.
inline std::vector<Segment> extract_segments(std::span<const std::uint8_t> mask) {
  std::vector<Segment> out;
  std::size_t i = 0;
  while (i < mask.size()) {
    if (!mask[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < mask.size() && mask[j + 1]) ++j;
    out.push_back({i, j});
    i = j + 1;
  }
  return out;
}

inline std::vector<std::uint8_t> mask_from_segments(std::span<const Segment> segs, std::size_t L) {
  std::vector<std::uint8_t> m(L, 0);
  for (const auto& s : segs) {
    require(s.f_b <= s.f_e && s.f_e < L, ErrorCode::ShapeMismatch, "segment outside spectrum");
    std::fill(m.begin() + static_cast<std::ptrdiff_t>(s.f_b), m.begin() + static_cast<std::ptrdiff_t>(s.f_e) + 1, 1);
  }
  return m;
}

inline OccupancyMask occupancy_from_segments(std::span<const Segment> segs, std::size_t L) {
  auto m = mask_from_segments(segs, L);
  return {m, m};
}

struct BinaryMasks {
  std::vector<std::uint8_t> x;
  std::vector<std::uint8_t> y;
  std::vector<std::uint8_t> abs;
};

/// Thresholds each channel at tau, plus the magnitude mask |p_x + j p_y| / sqrt(2) >= tau.
inline BinaryMasks binarize(const PredictedSpectrum& pred, double tau) {
  require(tau > 0.0 && tau < 1.0, ErrorCode::TauOutOfRange, "binarization threshold must lie in (0, 1)");
  require(pred.p_x.size() == pred.p_y.size(), ErrorCode::ShapeMismatch, "binarize channel lengths");
  const std::size_t L = pred.size();
  BinaryMasks m{std::vector<std::uint8_t>(L), std::vector<std::uint8_t>(L), std::vector<std::uint8_t>(L)};
  for (std::size_t f = 0; f < L; ++f) {
    m.x[f] = pred.p_x[f] >= tau;
    m.y[f] = pred.p_y[f] >= tau;
    m.abs[f] = std::hypot(pred.p_x[f], pred.p_y[f]) / std::numbers::sqrt2 >= tau;
  }
  return m;
}

/// Segments read off the magnitude mask; this is what evaluation scores.
inline std::vector<Segment> predicted_segments(const PredictedSpectrum& pred, double tau = 0.5) {
  return extract_segments(binarize(pred, tau).abs);
}

namespace detail {
inline bool intersects(const Segment& a, const Segment& b) { return a.f_b <= b.f_e && b.f_b <= a.f_e; }
}  // namespace detail

/// Pairs every x-run with every intersecting y-run (box = x extent by y extent);
/// runs without a partner become square boxes over their own extent.
inline std::vector<BoxZ> boxes_from_masks(std::span<const std::uint8_t> mask_x, std::span<const std::uint8_t> mask_y) {
  const auto xr = extract_segments(mask_x);
  const auto yr = extract_segments(mask_y);
  std::vector<BoxZ> boxes;
  std::vector<bool> y_used(yr.size(), false);
  for (const auto& x : xr) {
    bool paired = false;
    for (std::size_t k = 0; k < yr.size(); ++k) {
      if (detail::intersects(x, yr[k])) {
        boxes.push_back({x.f_b, x.f_e, yr[k].f_b, yr[k].f_e});
        y_used[k] = true;
        paired = true;
      }
    }
    if (!paired) boxes.push_back({x.f_b, x.f_e, x.f_b, x.f_e});
  }
  for (std::size_t k = 0; k < yr.size(); ++k) {
    if (!y_used[k]) boxes.push_back({yr[k].f_b, yr[k].f_e, yr[k].f_b, yr[k].f_e});
  }
  return boxes;
}

namespace detail {
// Overlap length of inclusive intervals under the half-open [b, e+1) convention.
inline double overlap(std::size_t ab, std::size_t ae, std::size_t bb, std::size_t be) {
  const std::size_t lo = std::max(ab, bb), hi = std::min(ae, be) + 1;
  return hi > lo ? static_cast<double>(hi - lo) : 0.0;
}
}  // namespace detail

inline double ciou(const BoxZ& a, const BoxZ& b) {
  const double inter = detail::overlap(a.x_begin, a.x_end, b.x_begin, b.x_end) *
                       detail::overlap(a.y_begin, a.y_end, b.y_begin, b.y_end);
  const double area_a = static_cast<double>(a.x_end - a.x_begin + 1) * static_cast<double>(a.y_end - a.y_begin + 1);
  const double area_b = static_cast<double>(b.x_end - b.x_begin + 1) * static_cast<double>(b.y_end - b.y_begin + 1);
  return inter / (area_a + area_b - inter);
}

/// (min(e) + 1 - max(b)) / (max(e) + 1 - min(b)), floored at zero.
inline double riou(const Segment& a, const Segment& b) {
  const double inter = detail::overlap(a.f_b, a.f_e, b.f_b, b.f_e);
  const double hull = static_cast<double>(std::max(a.f_e, b.f_e) + 1 - std::min(a.f_b, b.f_b));
  return inter / hull;
}

/// Row-major N x M score matrix.
struct IoUMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> c;

  double operator()(std::size_t i, std::size_t j) const { return c[i * cols + j]; }
};

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (row, col), sorted by row
  double total = 0.0;
};

namespace detail {

// Minimum-cost perfect assignment on an n x n matrix (Hungarian method with
// potentials). Returns row -> column.
inline std::vector<std::size_t> hungarian_min(const std::vector<double>& cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

// Best achievable total on the sub-problem with some rows/cols removed.
inline double best_total(const IoUMatrix& C, const std::vector<char>& row_free, const std::vector<char>& col_free) {
  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i < C.rows; ++i)
    if (row_free[i]) rows.push_back(i);
  for (std::size_t j = 0; j < C.cols; ++j)
    if (col_free[j]) cols.push_back(j);
  const std::size_t n = std::max(rows.size(), cols.size());
  if (n == 0 || rows.empty() || cols.empty()) return 0.0;
  std::vector<double> cost(n * n, 0.0);
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = 0; b < cols.size(); ++b) cost[a * n + b] = -C(rows[a], cols[b]);
  const auto r2c = hungarian_min(cost, n);
  double total = 0.0;
  for (std::size_t a = 0; a < rows.size(); ++a)
    if (r2c[a] < cols.size()) total += C(rows[a], cols[r2c[a]]);
  return total;
}

}  // namespace detail

/// One-to-one assignment maximizing the summed score. Among optimal
/// assignments the lexicographically smallest (row, col) pair list wins;
/// zero-score pairs are left unmatched since they add nothing to the total.
inline Assignment optimal_assignment(const IoUMatrix& C) {
  Assignment out;
  if (C.rows == 0 || C.cols == 0) return out;
  std::vector<char> row_free(C.rows, 1), col_free(C.cols, 1);
  const double target = detail::best_total(C, row_free, col_free);
  const double tol = 1e-12 * std::max(1.0, target);
  double fixed = 0.0;
  for (std::size_t i = 0; i < C.rows; ++i) {
    row_free[i] = 0;
    for (std::size_t j = 0; j < C.cols; ++j) {
      if (!col_free[j] || C(i, j) <= 0.0) continue;
      col_free[j] = 0;
      const double with = fixed + C(i, j) + detail::best_total(C, row_free, col_free);
      if (with >= target - tol) {
        out.pairs.emplace_back(i, j);
        fixed += C(i, j);
        break;
      }
      col_free[j] = 1;
    }
  }
  out.total = fixed;
  return out;
}

inline IoUMatrix riou_matrix(std::span<const Segment> truths, std::span<const Segment> preds) {
  IoUMatrix m{truths.size(), preds.size(), std::vector<double>(truths.size() * preds.size())};
  for (std::size_t i = 0; i < truths.size(); ++i)
    for (std::size_t j = 0; j < preds.size(); ++j) m.c[i * preds.size() + j] = riou(truths[i], preds[j]);
  return m;
}

inline IoUMatrix ciou_matrix(std::span<const BoxZ> truths, std::span<const BoxZ> preds) {
  IoUMatrix m{truths.size(), preds.size(), std::vector<double>(truths.size() * preds.size())};
  for (std::size_t i = 0; i < truths.size(); ++i)
    for (std::size_t j = 0; j < preds.size(); ++j) m.c[i * preds.size() + j] = ciou(truths[i], preds[j]);
  return m;
}

/// Matched complex-plane IoU of one sample, normalized by max(N, N_hat) so
/// that both misses and spurious boxes lower the score. 1 when both are empty.
inline double ciou_score(const OccupancyMask& truth, const PredictedSpectrum& pred, double tau = 0.5) {
  const auto tb = boxes_from_masks(truth.o_x, truth.o_y);
  const auto m = binarize(pred, tau);
  const auto pb = boxes_from_masks(m.x, m.y);
  if (tb.empty() && pb.empty()) return 1.0;
  const auto a = optimal_assignment(ciou_matrix(tb, pb));
  return a.total / static_cast<double>(std::max(tb.size(), pb.size()));
}

struct DetectionMetrics {
  double accuracy = 0.0;
  double recall = 0.0;
  double mean_iou = 0.0;
};

/// Metrics for a single sample: optimal one-to-one matching on riou, TP are
/// matched pairs with riou >= tau.
inline DetectionMetrics sample_detection_metrics(std::span<const Segment> pred, std::span<const Segment> truth,
                                                 double tau) {
  const auto a = optimal_assignment(riou_matrix(truth, pred));
  std::size_t tp = 0;
  double iou_sum = 0.0;
  for (const auto& [i, j] : a.pairs) {
    const double s = riou(truth[i], pred[j]);
    iou_sum += s;
    if (s >= tau) ++tp;
  }
  const std::size_t fn = truth.size() - tp, fp = pred.size() - tp;
  DetectionMetrics m;
  const std::size_t denom = tp + fp + fn;
  m.accuracy = denom == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(denom);
  m.recall = truth.empty() ? (pred.empty() ? 1.0 : 0.0) : static_cast<double>(tp) / static_cast<double>(truth.size());
  m.mean_iou = truth.empty() ? (pred.empty() ? 1.0 : 0.0) : iou_sum / static_cast<double>(truth.size());
  return m;
}

/// Per-sample metrics averaged over samples.
inline DetectionMetrics detection_metrics(std::span<const std::vector<Segment>> preds,
                                          std::span<const std::vector<Segment>> truths, double tau) {
  require(preds.size() == truths.size(), ErrorCode::ShapeMismatch, "detection_metrics sample counts differ");
  DetectionMetrics acc;
  if (preds.empty()) return acc;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const auto m = sample_detection_metrics(preds[s], truths[s], tau);
    acc.accuracy += m.accuracy;
    acc.recall += m.recall;
    acc.mean_iou += m.mean_iou;
  }
  const double n = static_cast<double>(preds.size());
  acc.accuracy /= n;
  acc.recall /= n;
  acc.mean_iou /= n;
  return acc;
}

}  // namespace specseg

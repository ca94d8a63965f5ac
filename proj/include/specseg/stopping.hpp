#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>

namespace specseg {

struct ValidationPoint {
  double val_loss = 0.0;
  double val_ciou = 0.0;
};

enum class StopDecision { Continue, ReduceLr, Stop };

inline constexpr double kDefaultMinDelta = 1e-4;

/// Consecutive trailing epochs in which neither the validation loss fell by
/// more than min_delta below its best nor the ciou rose more than min_delta
/// above its best. An improvement of exactly min_delta is stagnation.
/// Epochs before `from_epoch` are only used to establish the bests.
inline std::size_t stagnant_epochs(std::span<const ValidationPoint> history, double min_delta,
                                   std::size_t from_epoch = 0) {
  double best_loss = std::numeric_limits<double>::infinity();
  double best_ciou = -std::numeric_limits<double>::infinity();
  std::size_t count = 0;
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& h = history[e];
    const bool loss_better = h.val_loss < best_loss - min_delta;
    const bool ciou_better = h.val_ciou > best_ciou + min_delta;
    if (loss_better) best_loss = h.val_loss;
    if (ciou_better) best_ciou = h.val_ciou;
    if (loss_better || ciou_better || e < from_epoch) {
      count = 0;
    } else {
      ++count;
    }
  }
  return count;
}

/// Early-stopping rule without a learning-rate schedule.
inline StopDecision stopping_criterion(std::span<const ValidationPoint> history, std::size_t patience,
                                       double min_delta = kDefaultMinDelta) {
  return stagnant_epochs(history, min_delta) >= patience ? StopDecision::Stop : StopDecision::Continue;
}

/// Stopping rule with a single learning-rate reduction. `lr_reduced_after`
/// holds the number of epochs completed when the reduction fired (if it has);
/// only epochs after that point count towards stopping.
inline StopDecision schedule_decision(std::span<const ValidationPoint> history, std::size_t lr_patience,
                                      std::size_t stop_patience, double min_delta,
                                      std::optional<std::size_t> lr_reduced_after) {
  if (!lr_reduced_after) {
    const std::size_t s = stagnant_epochs(history, min_delta);
    if (s >= lr_patience) return StopDecision::ReduceLr;
    return s >= stop_patience ? StopDecision::Stop : StopDecision::Continue;
  }
  const std::size_t s = stagnant_epochs(history, min_delta, *lr_reduced_after);
  return s >= stop_patience ? StopDecision::Stop : StopDecision::Continue;
}

}  // namespace specseg

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "specseg/model.hpp"

namespace specseg {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam applied independently to every real scalar, so a complex weight is
/// updated as its real and imaginary parts.
template <Real R>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::size_t steps() const { return t_; }

  void step(Model<R>& model) {
    begin_step();
    std::size_t slot = 0;
    model.for_each_real_param(
        [&](const std::string&, std::span<R> value, std::span<R> grad) { update(slot++, value, grad); });
  }

  /// Advances the step count; call once before the update() calls of a step.
  void begin_step() { ++t_; }

  /// Updates one parameter (as flat real scalars) held in moment slot `slot`.
  void update(std::size_t slot, std::span<R> value, std::span<const R> grad) {
    require(value.size() == grad.size(), ErrorCode::ShapeMismatch, "Adam: gradient size differs from parameter");
    if (slot == m_.size()) {
      m_.emplace_back(value.size(), 0.0);
      v_.emplace_back(value.size(), 0.0);
    }
    require(slot < m_.size() && m_[slot].size() == value.size(), ErrorCode::ShapeMismatch,
            "Adam: moment slot does not match parameter");
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& m = m_[slot];
    auto& v = v_[slot];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      value[i] = static_cast<R>(value[i] - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
    }
  }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace specseg

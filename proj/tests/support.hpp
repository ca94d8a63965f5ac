#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "specseg/rng.hpp"
#include "specseg/tensor.hpp"

namespace specseg::testing {

/// Real scalars of a tensor; a complex entry contributes (re, im).
template <Scalar T>
std::span<real_of_t<T>> real_view(Tensor<T>& t) {
  constexpr std::size_t w = is_complex_v<T> ? 2 : 1;
  return {reinterpret_cast<real_of_t<T>*>(t.data()), t.size() * w};
}

template <Scalar T>
std::vector<double> real_copy(const Tensor<T>& t) {
  std::vector<double> out;
  for (const auto& v : t.values()) {
    out.push_back(static_cast<double>(re(v)));
    if constexpr (is_complex_v<T>) out.push_back(static_cast<double>(im(v)));
  }
  return out;
}

template <Scalar T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) {
    const double x = rng.normal() * scale;
    const double y = is_complex_v<T> ? rng.normal() * scale : 0.0;
    v = make_scalar<T>(static_cast<real_of_t<T>>(x), static_cast<real_of_t<T>>(y));
  }
  return t;
}

/// Keeps every real scalar at least `margin` away from zero so a finite
/// difference never straddles a ReLU kink.
template <Scalar T>
void push_off_zero(Tensor<T>& t, double margin) {
  for (auto& v : real_view(t)) {
    if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
  }
}

/// <u, y> as a real number: sum of u_x y_x + u_y y_y. Its Wirtinger-style
/// gradient with respect to y is u itself.
template <Scalar T>
double probe(const Tensor<T>& u, const Tensor<T>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    s += static_cast<double>(re(u[i])) * re(y[i]) + static_cast<double>(im(u[i])) * im(y[i]);
  }
  return s;
}

/// Central finite differences of `loss` over `vars`, compared against
/// `analytic` as ||num - ana|| / max(||num||, ||ana||).
template <typename F>
double fd_relative_error(std::span<double> vars, std::span<const double> analytic, F&& loss, double h = 1e-5) {
  double diff2 = 0.0, num2 = 0.0, ana2 = 0.0;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    const double keep = vars[i];
    vars[i] = keep + h;
    const double up = loss();
    vars[i] = keep - h;
    const double down = loss();
    vars[i] = keep;
    const double num = (up - down) / (2.0 * h);
    diff2 += (num - analytic[i]) * (num - analytic[i]);
    num2 += num * num;
    ana2 += analytic[i] * analytic[i];
  }
  const double scale = std::sqrt(std::max({num2, ana2, 1e-300}));
  return std::sqrt(diff2) / scale;
}

}  // namespace specseg::testing

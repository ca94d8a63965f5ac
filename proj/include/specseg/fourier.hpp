#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "specseg/tensor.hpp"

namespace specseg {

constexpr bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// Time-domain complex baseband capture r_IQ[n], n = 0..L-1.
template <Real R>
struct IQFrame {
  ComplexTensor<R> samples;  // shape [L]
  double sample_rate_hz = 20e6;
  double center_freq_hz = 0.0;

  std::size_t length() const { return samples.size(); }
};

/// DFT coefficients R[f] in natural bin order f = 0..L-1.
template <Real R>
struct SpectrumFrame {
  ComplexTensor<R> coeffs;  // shape [L]
  double bin_width_hz = 0.0;

  std::size_t length() const { return coeffs.size(); }
};

template <Real R>
IQFrame<R> make_frame(std::vector<std::complex<R>> samples, double sample_rate_hz = 20e6,
                      double center_freq_hz = 0.0) {
  const std::size_t n = samples.size();
  require(n >= 1, ErrorCode::ShapeMismatch, "empty IQ frame");
  return {ComplexTensor<R>({n}, std::move(samples)), sample_rate_hz, center_freq_hz};
}

/// Direct O(L^2) evaluation of R[f] = sum_n r[n] exp(-j 2 pi f n / L), unnormalized.
template <Real R>
SpectrumFrame<R> dft(const IQFrame<R>& frame) {
  const std::size_t L = frame.length();
  require(L >= 1, ErrorCode::ShapeMismatch, "dft of empty frame");
  ComplexTensor<R> out({L});
  const auto& x = frame.samples;
  for (std::size_t f = 0; f < L; ++f) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t n = 0; n < L; ++n) {
      // Reduce f*n modulo L first so the twiddle argument stays small.
      const double ang = -2.0 * std::numbers::pi * static_cast<double>((f * n) % L) / static_cast<double>(L);
      acc += std::complex<double>(x[n]) * std::polar(1.0, ang);
    }
    out[f] = std::complex<R>(acc);
  }
  return {std::move(out), frame.sample_rate_hz / static_cast<double>(L)};
}

namespace detail {

// Iterative radix-2 decimation-in-time transform on a power-of-two buffer.
template <Real R>
void fft_inplace(std::vector<std::complex<R>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  // Twiddles computed once per transform in double and rounded to R.
  std::vector<std::complex<R>> tw(n / 2);
  for (std::size_t k = 0; k < n / 2; ++k) {
    tw[k] = std::complex<R>(std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n)));
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const std::complex<R> u = a[i + k];
        const std::complex<R> v = a[i + k + half] * tw[k * step];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

}  // namespace detail

/// Radix-2 fast path for dft(); same unnormalized convention.
template <Real R>
SpectrumFrame<R> fft(const IQFrame<R>& frame) {
  const std::size_t L = frame.length();
  require(is_power_of_two(L), ErrorCode::NonPowerOfTwoLength, "fft length " + std::to_string(L));
  std::vector<std::complex<R>> buf(frame.samples.values().begin(), frame.samples.values().end());
  detail::fft_inplace(buf);
  return {ComplexTensor<R>({L}, std::move(buf)), frame.sample_rate_hz / static_cast<double>(L)};
}

/// Rotates natural-order bins so that bin L/2 holds f = 0 (the receiver
/// center frequency). Segment labels and model inputs live in this index space.
template <Scalar T>
Tensor<T> centered(const Tensor<T>& natural) {
  const std::size_t L = natural.size();
  Tensor<T> out(natural.shape());
  const std::size_t half = L / 2;
  for (std::size_t i = 0; i < L; ++i) out[(i + half) % L] = natural[i];
  return out;
}

}  // namespace specseg

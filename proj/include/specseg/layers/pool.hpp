#pragma once

#include "specseg/tensor.hpp"

namespace specseg {

/// Non-overlapping mean over windows along the last axis of [batch, ch, len];
/// real and imaginary parts are averaged independently.
template <Scalar T>
Tensor<T> avgpool_forward(const Tensor<T>& z, std::size_t window) {
  require(z.rank() == 3, ErrorCode::ShapeMismatch, "avgpool input must be [batch, ch, len]");
  require(window >= 1 && z.dim(2) % window == 0, ErrorCode::LengthNotDivisible,
          "length " + std::to_string(z.dim(2)) + " not divisible by window " + std::to_string(window));
  using R = real_of_t<T>;
  const std::size_t rows = z.dim(0) * z.dim(1), len = z.dim(2), out_len = len / window;
  Tensor<T> out({z.dim(0), z.dim(1), out_len});
  const R inv = R(1) / static_cast<R>(window);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out_len; ++o) {
      T acc{};
      for (std::size_t k = 0; k < window; ++k) acc += z[r * len + o * window + k];
      out[r * out_len + o] = acc * inv;
    }
  }
  return out;
}

/// Spreads each pooled gradient uniformly (factor 1/window) over its window.
template <Scalar T>
Tensor<T> avgpool_backward(const Shape& input_shape, std::size_t window, const Tensor<T>& upstream) {
  require(input_shape.size() == 3 && window >= 1 && input_shape[2] % window == 0, ErrorCode::LengthNotDivisible,
          "avgpool backward geometry");
  require(upstream.shape() == Shape{input_shape[0], input_shape[1], input_shape[2] / window}, ErrorCode::ShapeMismatch,
          "avgpool upstream shape " + shape_str(upstream.shape()));
  using R = real_of_t<T>;
  Tensor<T> out(input_shape);
  const std::size_t rows = input_shape[0] * input_shape[1], len = input_shape[2], out_len = len / window;
  const R inv = R(1) / static_cast<R>(window);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < out_len; ++o) {
      const T g = upstream[r * out_len + o] * inv;
      for (std::size_t k = 0; k < window; ++k) out[r * len + o * window + k] = g;
    }
  }
  return out;
}

/// Global variant: pools to a requested output length (window = len / target).
template <Scalar T>
Tensor<T> avgpool_to_length(const Tensor<T>& z, std::size_t target_len) {
  require(z.rank() == 3, ErrorCode::ShapeMismatch, "avgpool input must be [batch, ch, len]");
  require(target_len >= 1 && z.dim(2) % target_len == 0, ErrorCode::LengthNotDivisible,
          "length " + std::to_string(z.dim(2)) + " cannot be split into " + std::to_string(target_len) + " windows");
  return avgpool_forward(z, z.dim(2) / target_len);
}

template <Scalar T>
class AvgPool {
 public:
  AvgPool() = default;
  explicit AvgPool(std::size_t target_len) : target_len_(target_len) {}

  Tensor<T> forward(const Tensor<T>& z) {
    input_shape_ = z.shape();
    require(z.rank() == 3 && z.dim(2) % target_len_ == 0, ErrorCode::LengthNotDivisible, "avgpool target length");
    window_ = z.dim(2) / target_len_;
    return avgpool_forward(z, window_);
  }
  Tensor<T> backward(const Tensor<T>& upstream) const { return avgpool_backward(input_shape_, window_, upstream); }

  std::size_t target_length() const { return target_len_; }

 private:
  std::size_t target_len_ = 1;
  std::size_t window_ = 1;
  Shape input_shape_;
};

}  // namespace specseg

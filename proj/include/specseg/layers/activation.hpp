#pragma once

#include <cmath>

#include "specseg/tensor.hpp"

namespace specseg {

// Split activations: g(z) = g(x) + j g(y). For real T only the x path exists.

namespace detail {
template <Real R>
inline R logistic(R v) {
  return v >= R(0) ? R(1) / (R(1) + std::exp(-v)) : std::exp(v) / (R(1) + std::exp(v));
}
}  // namespace detail

template <Scalar T>
Tensor<T> relu_forward(const Tensor<T>& z) {
  using R = real_of_t<T>;
  Tensor<T> out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = make_scalar<T>(std::max(re(z[i]), R(0)), std::max(im(z[i]), R(0)));
  }
  return out;
}

/// Masks the upstream gradient by (x > 0) and (y > 0) independently.
template <Scalar T>
Tensor<T> relu_backward(const Tensor<T>& z, const Tensor<T>& upstream) {
  require(z.shape() == upstream.shape(), ErrorCode::ShapeMismatch, "relu upstream shape");
  using R = real_of_t<T>;
  Tensor<T> out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = make_scalar<T>(re(z[i]) > R(0) ? re(upstream[i]) : R(0), im(z[i]) > R(0) ? im(upstream[i]) : R(0));
  }
  return out;
}

template <Scalar T>
Tensor<T> sigmoid_forward(const Tensor<T>& z) {
  Tensor<T> out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = make_scalar<T>(detail::logistic(re(z[i])), detail::logistic(im(z[i])));
  }
  return out;
}

/// Backward in terms of the forward output s: ds/dv = s (1 - s) per component.
template <Scalar T>
Tensor<T> sigmoid_backward_from_output(const Tensor<T>& s, const Tensor<T>& upstream) {
  require(s.shape() == upstream.shape(), ErrorCode::ShapeMismatch, "sigmoid upstream shape");
  using R = real_of_t<T>;
  Tensor<T> out(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const R sx = re(s[i]), sy = im(s[i]);
    out[i] = make_scalar<T>(re(upstream[i]) * sx * (R(1) - sx), im(upstream[i]) * sy * (R(1) - sy));
  }
  return out;
}

template <Scalar T>
Tensor<T> sigmoid_backward(const Tensor<T>& z, const Tensor<T>& upstream) {
  return sigmoid_backward_from_output(sigmoid_forward(z), upstream);
}

template <Scalar T>
class Relu {
 public:
  Tensor<T> forward(const Tensor<T>& z) {
    input_ = z;
    return relu_forward(z);
  }
  Tensor<T> backward(const Tensor<T>& upstream) {
    Tensor<T> g = relu_backward(input_, upstream);
    input_ = Tensor<T>();
    return g;
  }

 private:
  Tensor<T> input_;
};

template <Scalar T>
class Sigmoid {
 public:
  Tensor<T> forward(const Tensor<T>& z) {
    output_ = sigmoid_forward(z);
    return output_;
  }
  Tensor<T> backward(const Tensor<T>& upstream) { return sigmoid_backward_from_output(output_, upstream); }

 private:
  Tensor<T> output_;
};

}  // namespace specseg

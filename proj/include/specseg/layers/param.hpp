#pragma once

#include <string>

#include <Eigen/Core>

#include "specseg/tensor.hpp"

namespace specseg {

/// Trainable tensor plus its accumulated gradient. For complex T the gradient
/// holds dL/dw_x + j dL/dw_y, i.e. real and imaginary parts are differentiated
/// as two independent real parameters.
template <Scalar T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T{}); }
};

/// Split view of a parameter gradient: d_x = dL/dw_x, d_y = dL/dw_y.
template <Real R>
struct WirtingerGrad {
  Tensor<R> d_x;
  Tensor<R> d_y;
};

template <Scalar T>
WirtingerGrad<real_of_t<T>> wirtinger(const Tensor<T>& g) {
  using R = real_of_t<T>;
  WirtingerGrad<R> out{Tensor<R>(g.shape()), Tensor<R>(g.shape())};
  for (std::size_t i = 0; i < g.size(); ++i) {
    out.d_x[i] = re(g[i]);
    out.d_y[i] = im(g[i]);
  }
  return out;
}

template <Scalar T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <Scalar T>
using MapRM = Eigen::Map<MatrixRM<T>>;

template <Scalar T>
using ConstMapRM = Eigen::Map<const MatrixRM<T>>;

}  // namespace specseg

#pragma once

#include <string>

#include "specseg/layers/param.hpp"

namespace specseg {

/// Dense map out = W z + b with W = w_x + j w_y of shape [out, in].
template <Scalar T>
struct LinearParams {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <Scalar T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

namespace detail {
template <Scalar T>
void check_linear(const Shape& in, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(weight.rank() == 2, ErrorCode::ShapeMismatch, "linear weight must be [out, in]");
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(0), ErrorCode::ShapeMismatch, "linear bias length");
  require(in.size() == 2 && in[1] == weight.dim(1), ErrorCode::ShapeMismatch,
          "linear input " + shape_str(in) + " vs weight " + shape_str(weight.shape()));
}

template <Scalar T>
Tensor<T> linear_apply(const Tensor<T>& z, const Tensor<T>& weight, const Tensor<T>& bias) {
  check_linear(z.shape(), weight, bias);
  const std::size_t B = z.dim(0), in = weight.dim(1), out = weight.dim(0);
  ConstMapRM<T> x(z.data(), B, in);
  ConstMapRM<T> w(weight.data(), out, in);
  Tensor<T> y({B, out});
  MapRM<T> ym(y.data(), B, out);
  ym.noalias() = x * w.transpose();
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), out);
  ym.rowwise() += b;
  return y;
}

template <Scalar T>
void linear_grads(const Tensor<T>& z, const Tensor<T>& weight, const Tensor<T>& upstream, Tensor<T>* dinput,
                  Tensor<T>& dweight, Tensor<T>& dbias) {
  const std::size_t B = z.dim(0), in = weight.dim(1), out = weight.dim(0);
  require(upstream.shape() == Shape{B, out}, ErrorCode::ShapeMismatch, "linear upstream shape");
  ConstMapRM<T> x(z.data(), B, in);
  ConstMapRM<T> g(upstream.data(), B, out);
  MapRM<T> dw(dweight.data(), out, in);
  dw.noalias() += g.transpose() * x.conjugate();
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(dbias.data(), out);
  db += g.colwise().sum();
  if (dinput) {
    ConstMapRM<T> w(weight.data(), out, in);
    *dinput = Tensor<T>({B, in});
    MapRM<T> dx(dinput->data(), B, in);
    dx.noalias() = g * w.conjugate();
  }
}
}  // namespace detail

/// Expands to (w_x x - w_y y + b_x) + j(w_y x + w_x y + b_y) for complex T.
template <Scalar T>
Tensor<T> linear_forward(const Tensor<T>& z, const LinearParams<T>& p) {
  return detail::linear_apply(z, p.weight, p.bias);
}

template <Scalar T>
LinearGrads<T> linear_backward(const Tensor<T>& z, const LinearParams<T>& p, const Tensor<T>& upstream) {
  detail::check_linear(z.shape(), p.weight, p.bias);
  LinearGrads<T> g{Tensor<T>(), Tensor<T>(p.weight.shape()), Tensor<T>(p.bias.shape())};
  detail::linear_grads(z, p.weight, upstream, &g.input, g.weight, g.bias);
  return g;
}

template <Scalar T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out)
      : weight_(name + ".weight", Tensor<T>({out, in})), bias_(name + ".bias", Tensor<T>({out})) {}

  Tensor<T> forward(const Tensor<T>& z) {
    input_ = z;
    return detail::linear_apply(z, weight_.value, bias_.value);
  }

  Tensor<T> backward(const Tensor<T>& upstream) {
    Tensor<T> dx;
    detail::linear_grads(input_, weight_.value, upstream, &dx, weight_.grad, bias_.grad);
    input_ = Tensor<T>();
    return dx;
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }

  template <typename F>
  void for_each_param(F&& f) {
    f(weight_);
    f(bias_);
  }

 private:
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> input_;
};

}  // namespace specseg

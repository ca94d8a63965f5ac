#pragma once

#include <string>

#include "specseg/layers/param.hpp"

namespace specseg {

/// Filter bank W = A + jB of shape [out_ch, in_ch, kernel] with per-channel bias.
/// For real T the same layout holds a plain real filter bank.
template <Scalar T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return weight.dim(0); }
  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t kernel() const { return weight.dim(2); }
};

template <Scalar T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

struct ConvGeometry {
  std::size_t batch, in_ch, in_len, out_ch, kernel, stride, padding, out_len;
};

namespace detail {

template <Scalar T>
ConvGeometry conv_geometry(const Shape& in, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                           std::size_t padding) {
  require(weight.rank() == 3, ErrorCode::ShapeMismatch, "conv weight must be [out, in, kernel]");
  const std::size_t out_ch = weight.dim(0), in_ch = weight.dim(1), kernel = weight.dim(2);
  require(bias.rank() == 1 && bias.dim(0) == out_ch, ErrorCode::ShapeMismatch, "conv bias must have out_ch entries");
  require(stride >= 1, ErrorCode::ShapeMismatch, "conv stride must be positive");
  require(in.size() == 3, ErrorCode::ShapeMismatch, "conv input must be [batch, ch, len], got " + shape_str(in));
  require(in[1] == in_ch, ErrorCode::ShapeMismatch,
          "conv input has " + std::to_string(in[1]) + " channels, filters expect " + std::to_string(in_ch));
  const std::size_t padded = in[2] + 2 * padding;
  require(padded >= kernel, ErrorCode::ShapeMismatch, "padded length shorter than kernel");
  return {in[0], in_ch, in[2], out_ch, kernel, stride, padding, (padded - kernel) / stride + 1};
}

// Unfolds [batch, ch, len] into a [ch*kernel, batch*out_len] patch matrix so the
// convolution becomes a single GEMM with the [out_ch, ch*kernel] filter matrix.
template <Scalar T>
MatrixRM<T> im2col(const Tensor<T>& x, const ConvGeometry& g) {
  MatrixRM<T> col(g.in_ch * g.kernel, g.batch * g.out_len);
  const T* src = x.data();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t k = 0; k < g.kernel; ++k) {
      T* row = col.data() + (c * g.kernel + k) * col.cols();
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* xin = src + (b * g.in_ch + c) * g.in_len;
        T* dst = row + b * g.out_len;
        for (std::size_t t = 0; t < g.out_len; ++t) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * g.stride + k) - static_cast<std::ptrdiff_t>(g.padding);
          dst[t] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(g.in_len)) ? xin[pos] : T{};
        }
      }
    }
  }
  return col;
}

template <Scalar T>
Tensor<T> col2im(const MatrixRM<T>& col, const ConvGeometry& g) {
  Tensor<T> dx({g.batch, g.in_ch, g.in_len});
  T* out = dx.data();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t k = 0; k < g.kernel; ++k) {
      const T* row = col.data() + (c * g.kernel + k) * col.cols();
      for (std::size_t b = 0; b < g.batch; ++b) {
        T* xin = out + (b * g.in_ch + c) * g.in_len;
        const T* srcrow = row + b * g.out_len;
        for (std::size_t t = 0; t < g.out_len; ++t) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * g.stride + k) - static_cast<std::ptrdiff_t>(g.padding);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(g.in_len)) xin[pos] += srcrow[t];
        }
      }
    }
  }
  return dx;
}

template <Scalar T>
Tensor<T> conv_from_cols(const MatrixRM<T>& col, const Tensor<T>& weight, const Tensor<T>& bias,
                         const ConvGeometry& g) {
  ConstMapRM<T> w(weight.data(), g.out_ch, g.in_ch * g.kernel);
  MatrixRM<T> y(g.out_ch, g.batch * g.out_len);
  y.noalias() = w * col;
  Tensor<T> out({g.batch, g.out_ch, g.out_len});
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      const T* src = y.data() + o * y.cols() + b * g.out_len;
      T* dst = out.data() + (b * g.out_ch + o) * g.out_len;
      const T b0 = bias[o];
      for (std::size_t t = 0; t < g.out_len; ++t) dst[t] = src[t] + b0;
    }
  }
  return out;
}

// Gathers upstream [batch, out_ch, out_len] into the [out_ch, batch*out_len] GEMM layout.
template <Scalar T>
MatrixRM<T> upstream_matrix(const Tensor<T>& up, const ConvGeometry& g) {
  require(up.shape() == Shape{g.batch, g.out_ch, g.out_len}, ErrorCode::ShapeMismatch,
          "conv upstream shape " + shape_str(up.shape()));
  MatrixRM<T> dy(g.out_ch, g.batch * g.out_len);
  for (std::size_t b = 0; b < g.batch; ++b) {
    for (std::size_t o = 0; o < g.out_ch; ++o) {
      const T* src = up.data() + (b * g.out_ch + o) * g.out_len;
      std::copy(src, src + g.out_len, dy.data() + o * dy.cols() + b * g.out_len);
    }
  }
  return dy;
}

template <Scalar T>
void conv_backward_from_cols(const MatrixRM<T>& col, const Tensor<T>& weight, const ConvGeometry& g,
                             const Tensor<T>& upstream, Tensor<T>* dinput, Tensor<T>& dweight, Tensor<T>& dbias,
                             bool need_input_grad) {
  const MatrixRM<T> dy = upstream_matrix(upstream, g);
  MapRM<T> dw(dweight.data(), g.out_ch, g.in_ch * g.kernel);
  // dL/dW = dY * conj(col)^T; for real T the adjoint is the plain transpose.
  dw.noalias() += dy * col.adjoint();
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(dbias.data(), g.out_ch);
  db += dy.rowwise().sum();
  if (need_input_grad) {
    ConstMapRM<T> w(weight.data(), g.out_ch, g.in_ch * g.kernel);
    MatrixRM<T> dcol(g.in_ch * g.kernel, g.batch * g.out_len);
    dcol.noalias() = w.adjoint() * dy;
    *dinput = col2im(dcol, g);
  }
}

}  // namespace detail

/// out = W * z + bias, with * the zero-padded strided cross-correlation over
/// channels. For complex T this expands to (A*x - B*y) + j(B*x + A*y).
template <Scalar T>
Tensor<T> conv1d_forward(const Tensor<T>& input, const ConvParams<T>& p) {
  const ConvGeometry g = detail::conv_geometry(input.shape(), p.weight, p.bias, p.stride, p.padding);
  return detail::conv_from_cols(detail::im2col(input, g), p.weight, p.bias, g);
}

template <Scalar T>
ConvGrads<T> conv1d_backward(const Tensor<T>& input, const ConvParams<T>& p, const Tensor<T>& upstream) {
  const ConvGeometry g = detail::conv_geometry(input.shape(), p.weight, p.bias, p.stride, p.padding);
  ConvGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(p.weight.shape()), Tensor<T>(p.bias.shape())};
  detail::conv_backward_from_cols(detail::im2col(input, g), p.weight, g, upstream, &grads.input, grads.weight, grads.bias,
                                  true);
  return grads;
}

/// Trainable convolution layer; caches the patch matrix between forward and backward.
template <Scalar T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(const std::string& name, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
         std::size_t padding)
      : weight_(name + ".weight", Tensor<T>({out_ch, in_ch, kernel})),
        bias_(name + ".bias", Tensor<T>({out_ch})),
        stride_(stride),
        padding_(padding) {}

  Tensor<T> forward(const Tensor<T>& x) {
    geom_ = detail::conv_geometry(x.shape(), weight_.value, bias_.value, stride_, padding_);
    col_ = detail::im2col(x, geom_);
    return detail::conv_from_cols(col_, weight_.value, bias_.value, geom_);
  }

  /// Accumulates parameter gradients and returns dL/d(input).
  Tensor<T> backward(const Tensor<T>& upstream, bool need_input_grad = true) {
    Tensor<T> dx;
    detail::conv_backward_from_cols(col_, weight_.value, geom_, upstream, &dx, weight_.grad, bias_.grad, need_input_grad);
    col_.resize(0, 0);
    return dx;
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  const Param<T>& weight() const { return weight_; }
  const Param<T>& bias() const { return bias_; }
  std::size_t stride() const { return stride_; }
  std::size_t padding() const { return padding_; }
  std::size_t kernel() const { return weight_.value.dim(2); }
  std::size_t out_length(std::size_t in_len) const { return (in_len + 2 * padding_ - kernel()) / stride_ + 1; }

  template <typename F>
  void for_each_param(F&& f) {
    f(weight_);
    f(bias_);
  }

 private:
  Param<T> weight_;
  Param<T> bias_;
  std::size_t stride_ = 1;
  std::size_t padding_ = 0;
  ConvGeometry geom_{};
  MatrixRM<T> col_;
};

}  // namespace specseg

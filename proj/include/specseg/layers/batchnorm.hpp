#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "specseg/layers/param.hpp"

namespace specseg {

enum class BnMode { Train, Eval };

/// Result of whitening a 2x2 covariance: sqrt_v = (V + eps I)^{1/2} and
/// inv_sqrt = its inverse, both symmetric positive definite.
struct Whitening {
  Eigen::Matrix2d sqrt_v;
  Eigen::Matrix2d inv_sqrt;
};

/// Closed-form principal square root of a 2x2 SPD matrix via trace and
/// determinant: sqrt(V) = (V + s I) / t, s = sqrt(det V), t = sqrt(tr V + 2 s).
inline Whitening whiten2x2(double vxx, double vxy, double vyy, double eps) {
  const double a = vxx + eps, d = vyy + eps, b = vxy;
  const double det = a * d - b * b;
  if (!(std::isfinite(det) && det > 0.0 && a > 0.0 && d > 0.0)) {
    fail(ErrorCode::SingularCovariance, "covariance + eps*I is not positive definite (det=" + std::to_string(det) + ")");
  }
  const double s = std::sqrt(det);
  const double t = std::sqrt(a + d + 2.0 * s);
  Whitening w;
  w.sqrt_v << (a + s) / t, b / t, b / t, (d + s) / t;
  // det(sqrt_v) == s
  w.inv_sqrt << (d + s) / (t * s), -b / (t * s), -b / (t * s), (a + s) / (t * s);
  return w;
}

/// Solves S X + X S = M for a 2x2 SPD S (the adjoint of d sqrt(V)).
inline Eigen::Matrix2d solve_sylvester2(const Eigen::Matrix2d& S, const Eigen::Matrix2d& M) {
  // Column-major vec: vec(SX + XS) = (I (x) S + S^T (x) I) vec(X).
  Eigen::Matrix4d K = Eigen::Matrix4d::Zero();
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      for (int k = 0; k < 2; ++k) {
        // (S X)_{ij} = sum_k S_ik X_kj ; (X S)_{ij} = sum_k X_ik S_kj
        K(i + 2 * j, k + 2 * j) += S(i, k);
        K(i + 2 * j, i + 2 * k) += S(k, j);
      }
    }
  }
  Eigen::Vector4d m(M(0, 0), M(1, 0), M(0, 1), M(1, 1));
  Eigen::Vector4d x = K.partialPivLu().solve(m);
  Eigen::Matrix2d X;
  X << x(0), x(2), x(1), x(3);
  return X;
}

/// Batch normalization over [batch, ch, len] (statistics per channel across
/// batch and length). Complex T: whitening by the 2x2 covariance of (x, y),
/// then gamma * z_norm + beta with complex gamma, beta. Real T: standard BN.
template <Scalar T>
class BatchNorm {
 public:
  using R = real_of_t<T>;
  static constexpr std::size_t kStatWidth = is_complex_v<T> ? 2 : 1;  // mean components
  static constexpr std::size_t kCovWidth = is_complex_v<T> ? 3 : 1;   // vxx, vxy, vyy | var

  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t channels, double momentum = 0.1, double eps = 1e-5)
      : gamma_(name + ".gamma", Tensor<T>({channels}, T(1))),
        beta_(name + ".beta", Tensor<T>({channels})),
        running_mean_({channels, kStatWidth}),
        running_cov_({channels, kCovWidth}),
        momentum_(momentum),
        eps_(eps) {
    for (std::size_t c = 0; c < channels; ++c) {
      running_cov_[c * kCovWidth] = R(1);
      if constexpr (is_complex_v<T>) running_cov_[c * kCovWidth + 2] = R(1);
    }
  }

  std::size_t channels() const { return gamma_.value.size(); }

  Tensor<T> forward(const Tensor<T>& z, BnMode mode) {
    require(z.rank() == 3 && z.dim(1) == channels(), ErrorCode::ShapeMismatch,
            "batchnorm input " + shape_str(z.shape()) + " for " + std::to_string(channels()) + " channels");
    if (mode == BnMode::Train) {
      require(z.dim(0) >= 2, ErrorCode::BatchTooSmall, "train-mode batchnorm needs batch >= 2");
    }
    mode_ = mode;
    const std::size_t B = z.dim(0), C = z.dim(1), L = z.dim(2);
    const double n = static_cast<double>(B * L);
    normalized_ = Tensor<T>(z.shape());
    Tensor<T> out(z.shape());
    whiten_.assign(C, Whitening{});
    for (std::size_t c = 0; c < C; ++c) {
      double mx = 0, my = 0, vxx = 0, vxy = 0, vyy = 0;
      if (mode == BnMode::Train) {
        for (std::size_t b = 0; b < B; ++b) {
          const T* p = z.data() + (b * C + c) * L;
          for (std::size_t t = 0; t < L; ++t) {
            mx += re(p[t]);
            my += im(p[t]);
          }
        }
        mx /= n;
        my /= n;
        for (std::size_t b = 0; b < B; ++b) {
          const T* p = z.data() + (b * C + c) * L;
          for (std::size_t t = 0; t < L; ++t) {
            const double dx = re(p[t]) - mx, dy = im(p[t]) - my;
            vxx += dx * dx;
            vxy += dx * dy;
            vyy += dy * dy;
          }
        }
        vxx /= n;
        vxy /= n;
        vyy /= n;
        update_running(c, mx, my, vxx, vxy, vyy);
      } else {
        mx = running_mean_[c * kStatWidth];
        vxx = running_cov_[c * kCovWidth];
        if constexpr (is_complex_v<T>) {
          my = running_mean_[c * kStatWidth + 1];
          vxy = running_cov_[c * kCovWidth + 1];
          vyy = running_cov_[c * kCovWidth + 2];
        }
      }
      const double g_x = re(gamma_.value[c]), g_y = im(gamma_.value[c]);
      const double b_x = re(beta_.value[c]), b_y = im(beta_.value[c]);
      if constexpr (is_complex_v<T>) {
        const Whitening w = whiten2x2(vxx, vxy, vyy, eps_);
        whiten_[c] = w;
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t off = (b * C + c) * L;
          for (std::size_t t = 0; t < L; ++t) {
            const double dx = re(z[off + t]) - mx, dy = im(z[off + t]) - my;
            const double nx = w.inv_sqrt(0, 0) * dx + w.inv_sqrt(0, 1) * dy;
            const double ny = w.inv_sqrt(1, 0) * dx + w.inv_sqrt(1, 1) * dy;
            normalized_[off + t] = T(static_cast<R>(nx), static_cast<R>(ny));
            out[off + t] = T(static_cast<R>(g_x * nx - g_y * ny + b_x), static_cast<R>(g_y * nx + g_x * ny + b_y));
          }
        }
      } else {
        const double var = vxx + eps_;
        if (!(std::isfinite(var) && var > 0.0)) {
          fail(ErrorCode::SingularCovariance, "variance + eps is not positive");
        }
        const double inv_std = 1.0 / std::sqrt(var);
        whiten_[c].inv_sqrt = Eigen::Matrix2d::Identity() * inv_std;
        whiten_[c].sqrt_v = Eigen::Matrix2d::Identity() * std::sqrt(var);
        for (std::size_t b = 0; b < B; ++b) {
          const std::size_t off = (b * C + c) * L;
          for (std::size_t t = 0; t < L; ++t) {
            const double nx = (re(z[off + t]) - mx) * inv_std;
            normalized_[off + t] = static_cast<R>(nx);
            out[off + t] = static_cast<R>(g_x * nx + b_x);
          }
        }
      }
    }
    return out;
  }

  /// Accumulates dL/dgamma, dL/dbeta and returns dL/dz for the last forward.
  Tensor<T> backward(const Tensor<T>& upstream) {
    require(upstream.shape() == normalized_.shape(), ErrorCode::ShapeMismatch, "batchnorm upstream shape");
    const std::size_t B = upstream.dim(0), C = upstream.dim(1), L = upstream.dim(2);
    const double n = static_cast<double>(B * L);
    Tensor<T> dz(upstream.shape());
    for (std::size_t c = 0; c < C; ++c) {
      const double g_x = re(gamma_.value[c]), g_y = im(gamma_.value[c]);
      const Whitening& w = whiten_[c];
      double dbx = 0, dby = 0, dgx = 0, dgy = 0;
      Eigen::Matrix2d G = Eigen::Matrix2d::Zero();
      Eigen::Vector2d dc_sum = Eigen::Vector2d::Zero();
      // First pass: parameter grads, and the direct term W dn plus G = sum dn c^T.
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t off = (b * C + c) * L;
        for (std::size_t t = 0; t < L; ++t) {
          const double ux = re(upstream[off + t]), uy = im(upstream[off + t]);
          const double nx = re(normalized_[off + t]), ny = im(normalized_[off + t]);
          dbx += ux;
          dby += uy;
          dgx += ux * nx + uy * ny;
          dgy += uy * nx - ux * ny;
          // dn = conj(gamma) * u ; for real T gamma_y = 0 and the y path vanishes.
          const Eigen::Vector2d dn(g_x * ux + g_y * uy, g_x * uy - g_y * ux);
          const Eigen::Vector2d direct = w.inv_sqrt * dn;
          if (mode_ == BnMode::Train) {
            const Eigen::Vector2d cv = w.sqrt_v * Eigen::Vector2d(nx, ny);
            G += dn * cv.transpose();
          }
          dz[off + t] = make_scalar<T>(static_cast<R>(direct(0)), static_cast<R>(direct(1)));
        }
      }
      gamma_.grad[c] += make_scalar<T>(static_cast<R>(dgx), static_cast<R>(dgy));
      beta_.grad[c] += make_scalar<T>(static_cast<R>(dbx), static_cast<R>(dby));
      if (mode_ == BnMode::Eval) continue;

      Eigen::Matrix2d Ksym;
      if constexpr (is_complex_v<T>) {
        // dL/dV through W = V^{-1/2}: dW = -W dS W with S dS + dS S = dV.
        const Eigen::Matrix2d M = -w.inv_sqrt * G * w.inv_sqrt;
        const Eigen::Matrix2d X = solve_sylvester2(w.sqrt_v, M);
        Ksym = (X + X.transpose()) / n;
      } else {
        // Scalar case of the same chain: d(v^{-1/2})/dv = -1/2 v^{-3/2}.
        const double inv = w.inv_sqrt(0, 0);
        Ksym = Eigen::Matrix2d::Zero();
        Ksym(0, 0) = 2.0 * (-0.5 * inv * inv * inv * G(0, 0)) / n;
      }
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t off = (b * C + c) * L;
        for (std::size_t t = 0; t < L; ++t) {
          const Eigen::Vector2d cv = w.sqrt_v * Eigen::Vector2d(re(normalized_[off + t]), im(normalized_[off + t]));
          const Eigen::Vector2d dc = Eigen::Vector2d(re(dz[off + t]), im(dz[off + t])) + Ksym * cv;
          dz[off + t] = make_scalar<T>(static_cast<R>(dc(0)), static_cast<R>(dc(1)));
          dc_sum += dc;
        }
      }
      const Eigen::Vector2d dc_mean = dc_sum / n;
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t off = (b * C + c) * L;
        for (std::size_t t = 0; t < L; ++t) {
          dz[off + t] -= make_scalar<T>(static_cast<R>(dc_mean(0)), static_cast<R>(dc_mean(1)));
        }
      }
    }
    normalized_ = Tensor<T>();
    return dz;
  }

  Param<T>& gamma() { return gamma_; }
  Param<T>& beta() { return beta_; }
  const Param<T>& gamma() const { return gamma_; }
  const Param<T>& beta() const { return beta_; }
  Tensor<R>& running_mean() { return running_mean_; }
  Tensor<R>& running_cov() { return running_cov_; }
  const Tensor<R>& running_mean() const { return running_mean_; }
  const Tensor<R>& running_cov() const { return running_cov_; }
  double momentum() const { return momentum_; }
  double epsilon() const { return eps_; }

  template <typename F>
  void for_each_param(F&& f) {
    f(gamma_);
    f(beta_);
  }

  template <typename F>
  void for_each_buffer(F&& f) {
    f(running_mean_);
    f(running_cov_);
  }

 private:
  void update_running(std::size_t c, double mx, double my, double vxx, double vxy, double vyy) {
    const double m = momentum_;
    auto blend = [m](R& slot, double v) { slot = static_cast<R>((1.0 - m) * slot + m * v); };
    blend(running_mean_[c * kStatWidth], mx);
    blend(running_cov_[c * kCovWidth], vxx);
    if constexpr (is_complex_v<T>) {
      blend(running_mean_[c * kStatWidth + 1], my);
      blend(running_cov_[c * kCovWidth + 1], vxy);
      blend(running_cov_[c * kCovWidth + 2], vyy);
    } else {
      (void)my;
      (void)vxy;
      (void)vyy;
    }
  }

  Param<T> gamma_;
  Param<T> beta_;
  Tensor<R> running_mean_;
  Tensor<R> running_cov_;
  double momentum_ = 0.1;
  double eps_ = 1e-5;

  BnMode mode_ = BnMode::Train;
  Tensor<T> normalized_;
  std::vector<Whitening> whiten_;
};

}  // namespace specseg

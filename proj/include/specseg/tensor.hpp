#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "specseg/error.hpp"

namespace specseg {

using Shape = std::vector<std::size_t>;

enum class Precision { Single, Double };

template <typename T>
struct is_complex : std::false_type {};
template <typename R>
struct is_complex<std::complex<R>> : std::true_type {};
template <typename T>
inline constexpr bool is_complex_v = is_complex<T>::value;

template <typename T>
struct real_of {
  using type = T;
};
template <typename R>
struct real_of<std::complex<R>> {
  using type = R;
};
template <typename T>
using real_of_t = typename real_of<T>::type;

template <typename T>
concept Real = std::is_same_v<T, float> || std::is_same_v<T, double>;

/// Either a real floating type or std::complex of one.
template <typename T>
concept Scalar = Real<T> || (is_complex_v<T> && Real<real_of_t<T>>);

template <Real R>
constexpr Precision precision_of() {
  return std::is_same_v<R, float> ? Precision::Single : Precision::Double;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

// Component access shared by real and complex scalars. For a real scalar the
// imaginary component is identically zero and writes to it are dropped.
template <Real R>
constexpr R re(R v) { return v; }
template <Real R>
constexpr R im(R) { return R(0); }
template <Real R>
constexpr R re(std::complex<R> v) { return v.real(); }
template <Real R>
constexpr R im(std::complex<R> v) { return v.imag(); }

template <Scalar T>
constexpr T make_scalar(real_of_t<T> x, real_of_t<T> y) {
  if constexpr (is_complex_v<T>) {
    return T(x, y);
  } else {
    (void)y;
    return x;
  }
}

/// Cache-line aligned storage. Eigen's vectorized reductions peel up to the
/// first aligned element, so a fixed alignment keeps summation order, and
/// hence results, independent of where the allocator puts a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

/// Dense row-major n-dimensional array. Shape extents are strictly positive
/// and data().size() always equals the product of the shape.
template <Scalar T>
class Tensor {
 public:
  using value_type = T;
  using real_type = real_of_t<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, const std::vector<T>& data)
      : Tensor(std::move(shape), Storage(data.begin(), data.end()), Adopt{}) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Reinterprets the same values under a new shape of equal element count.
  Tensor reshaped(Shape shape) const& {
    require(shape_numel(shape) == size(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_, Adopt{});
  }
  Tensor reshaped(Shape shape) && {
    require(shape_numel(shape) == size(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), std::move(data_), Adopt{});
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  using Storage = std::vector<T, AlignedAllocator<T>>;
  struct Adopt {};

  Tensor(Shape shape, Storage data, Adopt) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    require(data_.size() == shape_numel(shape_), ErrorCode::ShapeMismatch,
            "data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
  }

  void check_shape() const {
    for (auto e : shape_) require(e > 0, ErrorCode::ShapeMismatch, "zero extent in shape " + shape_str(shape_));
  }

  Shape shape_;
  Storage data_;
};

template <Real R>
using ComplexTensor = Tensor<std::complex<R>>;

template <Scalar T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](const T& v) { return std::isfinite(re(v)) && std::isfinite(im(v)); });
}

namespace detail {
template <Scalar T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
          std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <Scalar T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, const char* op, F f) {
  check_same_shape(a, b, op);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}
}  // namespace detail

template <Scalar T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::zip(a, b, "add", [](T x, T y) { return x + y; });
}

template <Scalar T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::zip(a, b, "sub", [](T x, T y) { return x - y; });
}

template <Scalar T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::zip(a, b, "mul", [](T x, T y) { return x * y; });
}

template <Scalar T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

template <Scalar T>
Tensor<T> conj(const Tensor<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = make_scalar<T>(re(a[i]), -im(a[i]));
  return out;
}

/// Elementwise magnitude sqrt(x^2 + y^2), returned as a real tensor.
template <Scalar T>
Tensor<real_of_t<T>> abs(const Tensor<T>& a) {
  Tensor<real_of_t<T>> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::abs(a[i]);
  return out;
}

}  // namespace specseg

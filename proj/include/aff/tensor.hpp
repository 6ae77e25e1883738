#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "aff/error.hpp"

namespace aff {

using Index = std::int64_t;

template <typename T>
struct is_complex : std::false_type {};
template <typename T>
struct is_complex<std::complex<T>> : std::true_type {};
template <typename T>
inline constexpr bool is_complex_v = is_complex<T>::value;

template <typename T>
struct real_scalar {
  using type = T;
};
template <typename T>
struct real_scalar<std::complex<T>> {
  using type = T;
};
template <typename T>
using real_scalar_t = typename real_scalar<T>::type;

template <typename T>
inline bool finite_value(T v) {
  if constexpr (is_complex_v<T>) {
    return std::isfinite(v.real()) && std::isfinite(v.imag());
  } else {
    return std::isfinite(v);
  }
}

// Dense row-major shape. Rank 0 is a scalar; every dim of a ranked shape
// must be >= 1 and the element count must fit Index.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) : dims_(dims) { validate(); }
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {
    validate();
  }

  Index rank() const { return static_cast<Index>(dims_.size()); }
  Index dim(Index i) const {
    if (i < 0 || i >= rank()) {
      throw AxisError("Shape::dim: axis " + std::to_string(i) +
                      " out of range for rank " + std::to_string(rank()));
    }
    return dims_[static_cast<std::size_t>(i)];
  }
  const std::vector<Index>& dims() const { return dims_; }

  Index numel() const {
    Index n = 1;
    for (Index d : dims_) {
      if (d != 0 && n > (std::int64_t{1} << 62) / d) {
        throw SizeError("Shape::numel: element count overflows Index");
      }
      n *= d;
    }
    return n;
  }

  bool operator==(const Shape& o) const { return dims_ == o.dims_; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) os << ',';
      os << dims_[i];
    }
    os << ']';
    return os.str();
  }

 private:
  void validate() const {
    for (Index d : dims_) {
      if (d < 1) {
        throw ShapeError("Shape: every dim must be >= 1, got " + str());
      }
    }
    (void)numel();
  }

  std::vector<Index> dims_;
};

// Dense row-major tensor over a real or complex scalar.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(static_cast<std::size_t>(shape_.numel()), T{}) {}
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<Index>(data_.size()) != shape_.numel()) {
      throw ShapeError("Tensor: data size " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return shape_.rank(); }
  Index dim(Index i) const { return shape_.dim(i); }
  Index numel() const { return static_cast<Index>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](Index i) const {
    return data_[static_cast<std::size_t>(i)];
  }

  // Multi-index access (debug/test convenience; kernels index flat).
  template <typename... Ix>
  T& at(Ix... ix) {
    return data_[static_cast<std::size_t>(flat_index(ix...))];
  }
  template <typename... Ix>
  const T& at(Ix... ix) const {
    return data_[static_cast<std::size_t>(flat_index(ix...))];
  }

  template <typename... Ix>
  Index flat_index(Ix... ix) const {
    constexpr Index n = sizeof...(Ix);
    if (n != shape_.rank()) {
      throw RankError("Tensor::at: " + std::to_string(n) +
                      " indices for rank " + std::to_string(shape_.rank()));
    }
    Index idx[n ? n : 1] = {static_cast<Index>(ix)...};
    Index flat = 0;
    for (Index a = 0; a < n; ++a) {
      if (idx[a] < 0 || idx[a] >= shape_.dim(a)) {
        throw ShapeError("Tensor::at: index " + std::to_string(idx[a]) +
                         " out of range on axis " + std::to_string(a) +
                         " of " + shape_.str());
      }
      flat = flat * shape_.dim(a) + idx[a];
    }
    return flat;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (Index i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

namespace detail {

template <typename T>
inline void ensure_finite(const Tensor<T>& t, const char* op) {
  for (Index i = 0; i < t.numel(); ++i) {
    if (!finite_value(t[i])) {
      throw NumericError(std::string(op) +
                         ": non-finite value at flat index " +
                         std::to_string(i));
    }
  }
}

template <typename T>
inline void ensure_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                              const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::ensure_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (Index i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  detail::ensure_finite(out, "add");
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::ensure_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  for (Index i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  detail::ensure_finite(out, "sub");
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::ensure_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (Index i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  detail::ensure_finite(out, "mul");
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  for (Index i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  detail::ensure_finite(out, "scale");
  return out;
}

// Sums over the given axes; reduced axes are removed from the shape.
// An empty axis list is the identity. Duplicate or out-of-range axes throw.
template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, const std::vector<Index>& axes) {
  if (axes.empty()) return x;
  const Index r = x.rank();
  std::vector<bool> reduced(static_cast<std::size_t>(r), false);
  for (Index a : axes) {
    if (a < 0 || a >= r) {
      throw AxisError("reduce_sum: axis " + std::to_string(a) +
                      " out of range for rank " + std::to_string(r));
    }
    if (reduced[static_cast<std::size_t>(a)]) {
      throw AxisError("reduce_sum: duplicate axis " + std::to_string(a));
    }
    reduced[static_cast<std::size_t>(a)] = true;
  }
  std::vector<Index> out_dims;
  for (Index a = 0; a < r; ++a) {
    if (!reduced[static_cast<std::size_t>(a)]) out_dims.push_back(x.dim(a));
  }
  Tensor<T> out{Shape(out_dims)};
  std::vector<Index> idx(static_cast<std::size_t>(r), 0);
  for (Index flat = 0; flat < x.numel(); ++flat) {
    Index oflat = 0;
    for (Index a = 0; a < r; ++a) {
      if (!reduced[static_cast<std::size_t>(a)]) {
        oflat = oflat * x.dim(a) + idx[static_cast<std::size_t>(a)];
      }
    }
    out[oflat] += x[flat];
    for (Index a = r - 1; a >= 0; --a) {
      if (++idx[static_cast<std::size_t>(a)] < x.dim(a)) break;
      idx[static_cast<std::size_t>(a)] = 0;
    }
  }
  detail::ensure_finite(out, "reduce_sum");
  return out;
}

template <typename T>
T sum_all(const Tensor<T>& x) {
  T s{};
  for (Index i = 0; i < x.numel(); ++i) s += x[i];
  return s;
}

template <typename T>
Tensor<T> real_part(const Tensor<std::complex<T>>& z) {
  Tensor<T> out(z.shape());
  for (Index i = 0; i < z.numel(); ++i) out[i] = z[i].real();
  return out;
}

template <typename T>
Tensor<T> imag_part(const Tensor<std::complex<T>>& z) {
  Tensor<T> out(z.shape());
  for (Index i = 0; i < z.numel(); ++i) out[i] = z[i].imag();
  return out;
}

template <typename T>
Tensor<std::complex<T>> make_complex(const Tensor<T>& re,
                                     const Tensor<T>& im) {
  detail::ensure_same_shape(re, im, "make_complex");
  Tensor<std::complex<T>> out(re.shape());
  for (Index i = 0; i < re.numel(); ++i) out[i] = {re[i], im[i]};
  return out;
}

template <typename T>
Tensor<std::complex<T>> make_complex(const Tensor<T>& re) {
  Tensor<std::complex<T>> out(re.shape());
  for (Index i = 0; i < re.numel(); ++i) out[i] = {re[i], T{}};
  return out;
}

template <typename T>
double max_abs(const Tensor<T>& x) {
  double m = 0.0;
  for (Index i = 0; i < x.numel(); ++i) {
    m = std::max(m, static_cast<double>(std::abs(x[i])));
  }
  return m;
}

// max_i|a_i-b_i| / max(max|a|, max|b|, 1e-30): relative to the tensors'
// overall magnitude, the metric used by every closeness assertion here.
template <typename T>
double max_rel_err(const Tensor<T>& a, const Tensor<T>& b) {
  detail::ensure_same_shape(a, b, "max_rel_err");
  double denom = std::max({max_abs(a), max_abs(b), 1e-30});
  double m = 0.0;
  for (Index i = 0; i < a.numel(); ++i) {
    m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  }
  return m / denom;
}

}  // namespace aff

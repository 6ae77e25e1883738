#pragma once

#include <complex>
#include <vector>

#include "aff/tensor.hpp"

namespace aff {

// DFT convention (single source of truth for the whole project):
//   forward:  X(u,v) = sum_{h,w} x(h,w) * exp(-2*pi*i*(u*h/H + v*w/W))
//   inverse:  x(h,w) = 1/(H*W) * sum_{u,v} X(u,v) * exp(+2*pi*i*(...))
// The forward transform is unnormalized; the inverse carries 1/(H*W).
// Consequently the adjoint of the forward map is H*W times the inverse.

enum class FftDirection { forward, inverse };

inline bool is_pow2(Index n) { return n >= 1 && (n & (n - 1)) == 0; }

// Radix-2 plan for one 2D size. Twiddles are computed in double and cast
// to the working scalar.
template <typename S>
class FftPlan {
 public:
  FftPlan(Index height, Index width, FftDirection direction)
      : h_(height), w_(width), dir_(direction) {
    if (!is_pow2(h_) || !is_pow2(w_)) {
      throw PlanError("FftPlan: size " + std::to_string(h_) + "x" +
                      std::to_string(w_) + " is not a power of two");
    }
    init_axis(h_, roots_h_, rev_h_);
    init_axis(w_, roots_w_, rev_w_);
  }

  Index height() const { return h_; }
  Index width() const { return w_; }
  FftDirection direction() const { return dir_; }

  // In-place transform of one contiguous H*W plane (row-major).
  void apply(std::complex<S>* plane) const {
    std::vector<std::complex<S>> col(static_cast<std::size_t>(h_));
    for (Index r = 0; r < h_; ++r) {
      transform_1d(plane + r * w_, w_, roots_w_, rev_w_);
    }
    for (Index c = 0; c < w_; ++c) {
      for (Index r = 0; r < h_; ++r) col[static_cast<std::size_t>(r)] = plane[r * w_ + c];
      transform_1d(col.data(), h_, roots_h_, rev_h_);
      for (Index r = 0; r < h_; ++r) plane[r * w_ + c] = col[static_cast<std::size_t>(r)];
    }
    if (dir_ == FftDirection::inverse) {
      const S norm = S(1) / static_cast<S>(h_ * w_);
      for (Index i = 0; i < h_ * w_; ++i) plane[i] *= norm;
    }
  }

 private:
  void init_axis(Index n, std::vector<std::complex<S>>& roots,
                 std::vector<Index>& rev) const {
    const double sign = dir_ == FftDirection::forward ? -1.0 : 1.0;
    roots.resize(static_cast<std::size_t>(n / 2 > 0 ? n / 2 : 1));
    for (Index k = 0; k < static_cast<Index>(roots.size()); ++k) {
      const double ang = sign * 2.0 * 3.14159265358979323846 *
                         static_cast<double>(k) / static_cast<double>(n);
      roots[static_cast<std::size_t>(k)] = {static_cast<S>(std::cos(ang)),
                                            static_cast<S>(std::sin(ang))};
    }
    rev.assign(static_cast<std::size_t>(n), 0);
    Index bits = 0;
    while ((Index{1} << bits) < n) ++bits;
    for (Index i = 0; i < n; ++i) {
      Index r = 0;
      for (Index b = 0; b < bits; ++b) r |= ((i >> b) & 1) << (bits - 1 - b);
      rev[static_cast<std::size_t>(i)] = r;
    }
  }

  static void transform_1d(std::complex<S>* a, Index n,
                           const std::vector<std::complex<S>>& roots,
                           const std::vector<Index>& rev) {
    if (n == 1) return;
    for (Index i = 0; i < n; ++i) {
      const Index j = rev[static_cast<std::size_t>(i)];
      if (i < j) std::swap(a[i], a[j]);
    }
    for (Index len = 2; len <= n; len <<= 1) {
      const Index half = len / 2;
      const Index step = n / len;
      for (Index base = 0; base < n; base += len) {
        for (Index j = 0; j < half; ++j) {
          const std::complex<S> u = a[base + j];
          const std::complex<S> v =
              a[base + j + half] * roots[static_cast<std::size_t>(j * step)];
          a[base + j] = u + v;
          a[base + j + half] = u - v;
        }
      }
    }
  }

  Index h_, w_;
  FftDirection dir_;
  std::vector<std::complex<S>> roots_h_, roots_w_;
  std::vector<Index> rev_h_, rev_w_;
};

namespace detail {

template <typename T>
inline void check_spatial(const Tensor<T>& x, Index h, Index w,
                          const char* op) {
  if (x.rank() < 2) {
    throw RankError(std::string(op) + ": rank must be >= 2, got shape " +
                    x.shape().str());
  }
  if (x.dim(x.rank() - 2) != h || x.dim(x.rank() - 1) != w) {
    throw ShapeError(std::string(op) + ": trailing dims of " +
                     x.shape().str() + " do not match plan " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace detail

// Transforms the trailing two axes of x per the plan, batched over all
// leading axes.
template <typename S>
Tensor<std::complex<S>> fft2(const Tensor<std::complex<S>>& x,
                             const FftPlan<S>& plan) {
  detail::check_spatial(x, plan.height(), plan.width(), "fft2");
  Tensor<std::complex<S>> out = x;
  const Index plane = plan.height() * plan.width();
  const Index planes = x.numel() / plane;
  for (Index p = 0; p < planes; ++p) plan.apply(out.data() + p * plane);
  return out;
}

template <typename S>
Tensor<std::complex<S>> fft2(const Tensor<std::complex<S>>& x) {
  if (x.rank() < 2) {
    throw RankError("fft2: rank must be >= 2, got shape " + x.shape().str());
  }
  FftPlan<S> plan(x.dim(x.rank() - 2), x.dim(x.rank() - 1),
                  FftDirection::forward);
  return fft2(x, plan);
}

template <typename S>
Tensor<std::complex<S>> ifft2(const Tensor<std::complex<S>>& x) {
  if (x.rank() < 2) {
    throw RankError("ifft2: rank must be >= 2, got shape " + x.shape().str());
  }
  FftPlan<S> plan(x.dim(x.rank() - 2), x.dim(x.rank() - 1),
                  FftDirection::inverse);
  return fft2(x, plan);
}

template <typename S>
Tensor<std::complex<S>> fft2_real(const Tensor<S>& x) {
  return fft2(make_complex(x));
}

// Direct-summation DFT oracle: O((H*W)^2) per plane, any size (not just
// powers of two). Deliberately shares no code path with FftPlan; sums are
// accumulated in double regardless of S.
template <typename S>
Tensor<std::complex<S>> dft2_naive(const Tensor<std::complex<S>>& x,
                                   FftDirection direction) {
  if (x.rank() < 2) {
    throw RankError("dft2_naive: rank must be >= 2, got shape " +
                    x.shape().str());
  }
  const Index h = x.dim(x.rank() - 2);
  const Index w = x.dim(x.rank() - 1);
  const double sign = direction == FftDirection::forward ? -1.0 : 1.0;
  const double two_pi = 2.0 * 3.14159265358979323846;
  std::vector<std::complex<double>> cis_h(static_cast<std::size_t>(h));
  std::vector<std::complex<double>> cis_w(static_cast<std::size_t>(w));
  for (Index k = 0; k < h; ++k) {
    cis_h[static_cast<std::size_t>(k)] =
        std::polar(1.0, sign * two_pi * static_cast<double>(k) /
                            static_cast<double>(h));
  }
  for (Index k = 0; k < w; ++k) {
    cis_w[static_cast<std::size_t>(k)] =
        std::polar(1.0, sign * two_pi * static_cast<double>(k) /
                            static_cast<double>(w));
  }
  Tensor<std::complex<S>> out(x.shape());
  const Index plane = h * w;
  const Index planes = x.numel() / plane;
  const double norm =
      direction == FftDirection::inverse ? 1.0 / static_cast<double>(plane) : 1.0;
  for (Index p = 0; p < planes; ++p) {
    const std::complex<S>* in = x.data() + p * plane;
    std::complex<S>* o = out.data() + p * plane;
    for (Index u = 0; u < h; ++u) {
      for (Index v = 0; v < w; ++v) {
        std::complex<double> acc{0.0, 0.0};
        for (Index hh = 0; hh < h; ++hh) {
          for (Index ww = 0; ww < w; ++ww) {
            const std::complex<double> phase =
                cis_h[static_cast<std::size_t>((u * hh) % h)] *
                cis_w[static_cast<std::size_t>((v * ww) % w)];
            acc += std::complex<double>(in[hh * w + ww]) * phase;
          }
        }
        acc *= norm;
        o[u * w + v] = {static_cast<S>(acc.real()), static_cast<S>(acc.imag())};
      }
    }
  }
  return out;
}

template <typename S>
Tensor<std::complex<S>> dft2_naive_real(const Tensor<S>& x,
                                        FftDirection direction) {
  return dft2_naive(make_complex(x), direction);
}

}  // namespace aff

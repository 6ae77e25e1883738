#pragma once

#include <Eigen/Core>
#include <complex>
#include <vector>

#include "aff/fft.hpp"
#include "aff/tensor.hpp"

// Raw forward/backward kernels. Shape validation happens here; the tape
// wrappers in autodiff.hpp add recording on top. Backward kernels follow
// the convention: given dL/dout, produce (or accumulate) dL/din.
// Complex gradients use dL/dRe + i*dL/dIm, under which the backward of a
// C-linear map is its conjugate transpose.

namespace aff::kern {

template <typename S>
using MatRM =
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecCol = Eigen::Matrix<S, Eigen::Dynamic, 1>;

namespace detail {

inline void require(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw ShapeError(std::string(op) + ": " + msg);
}

template <typename T>
inline void require_rank4(const Tensor<T>& x, const char* op) {
  if (x.rank() != 4) {
    throw RankError(std::string(op) + ": expected rank-4 [B,C,H,W], got " +
                    x.shape().str());
  }
}

inline Index conv_out(Index n, Index stride) {
  // kernel 3, zero padding 1
  return (n - 1) / stride + 1;
}

}  // namespace detail

// ---------------------------------------------------------------- pointwise

template <typename S>
Tensor<S> relu_fwd(const Tensor<S>& x) {
  Tensor<S> y(x.shape());
  for (Index i = 0; i < x.numel(); ++i) y[i] = x[i] > S(0) ? x[i] : S(0);
  return y;
}

template <typename S>
void relu_bwd(const Tensor<S>& x, const Tensor<S>& g, Tensor<S>& dx) {
  for (Index i = 0; i < x.numel(); ++i) dx[i] += x[i] > S(0) ? g[i] : S(0);
}

template <typename S>
Tensor<S> relu6_fwd(const Tensor<S>& x) {
  Tensor<S> y(x.shape());
  for (Index i = 0; i < x.numel(); ++i) {
    y[i] = x[i] < S(0) ? S(0) : (x[i] > S(6) ? S(6) : x[i]);
  }
  return y;
}

template <typename S>
void relu6_bwd(const Tensor<S>& x, const Tensor<S>& g, Tensor<S>& dx) {
  for (Index i = 0; i < x.numel(); ++i) {
    dx[i] += (x[i] > S(0) && x[i] < S(6)) ? g[i] : S(0);
  }
}

// ------------------------------------------------- grouped 1x1 linear (NCHW)

// x: [B,Cin,H,W], w: [Cout, Cin/groups], b: [Cout] -> y: [B,Cout,H,W].
// The same 1x1 map is applied at every spatial position, so each batch
// sample is one grouped GEMM over H*W columns.
template <typename S>
Tensor<S> group_linear_fwd(const Tensor<S>& x, const Tensor<S>& w,
                           const Tensor<S>& b, Index groups) {
  detail::require_rank4(x, "group_pointwise_linear");
  const Index B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(w.rank() == 2, "group_pointwise_linear",
                  "weight must be rank 2, got " + w.shape().str());
  const Index Cout = w.dim(0);
  detail::require(groups >= 1 && Cin % groups == 0 && Cout % groups == 0,
                  "group_pointwise_linear",
                  "groups=" + std::to_string(groups) +
                      " must divide Cin=" + std::to_string(Cin) +
                      " and Cout=" + std::to_string(Cout));
  detail::require(w.dim(1) == Cin / groups, "group_pointwise_linear",
                  "weight " + w.shape().str() + " does not match Cin/groups");
  detail::require(b.rank() == 1 && b.dim(0) == Cout, "group_pointwise_linear",
                  "bias must be [Cout]");
  const Index HW = H * W, ig = Cin / groups, og = Cout / groups;
  Tensor<S> y(Shape{B, Cout, H, W});
  Eigen::Map<const MatRM<S>> Wm(w.data(), Cout, ig);
  Eigen::Map<const VecCol<S>> Bm(b.data(), Cout);
  for (Index n = 0; n < B; ++n) {
    Eigen::Map<const MatRM<S>> X(x.data() + n * Cin * HW, Cin, HW);
    Eigen::Map<MatRM<S>> Y(y.data() + n * Cout * HW, Cout, HW);
    for (Index g = 0; g < groups; ++g) {
      Y.middleRows(g * og, og).noalias() =
          Wm.middleRows(g * og, og) * X.middleRows(g * ig, ig);
      Y.middleRows(g * og, og).colwise() += Bm.segment(g * og, og);
    }
  }
  return y;
}

template <typename S>
void group_linear_bwd(const Tensor<S>& x, const Tensor<S>& w, Index groups,
                      const Tensor<S>& gy, Tensor<S>& dx, Tensor<S>& dw,
                      Tensor<S>& db) {
  const Index B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Cout = w.dim(0);
  const Index HW = H * W, ig = Cin / groups, og = Cout / groups;
  Eigen::Map<const MatRM<S>> Wm(w.data(), Cout, ig);
  Eigen::Map<MatRM<S>> dWm(dw.data(), Cout, ig);
  Eigen::Map<VecCol<S>> dBm(db.data(), Cout);
  for (Index n = 0; n < B; ++n) {
    Eigen::Map<const MatRM<S>> X(x.data() + n * Cin * HW, Cin, HW);
    Eigen::Map<const MatRM<S>> GY(gy.data() + n * Cout * HW, Cout, HW);
    Eigen::Map<MatRM<S>> DX(dx.data() + n * Cin * HW, Cin, HW);
    for (Index g = 0; g < groups; ++g) {
      DX.middleRows(g * ig, ig).noalias() +=
          Wm.middleRows(g * og, og).transpose() * GY.middleRows(g * og, og);
      dWm.middleRows(g * og, og).noalias() +=
          GY.middleRows(g * og, og) * X.middleRows(g * ig, ig).transpose();
    }
    // bias reduction by hand: Eigen's vectorized row sums peel to the buffer's
    // alignment, which shifts between allocations and perturbs low bits
    const S* gp = gy.data() + n * Cout * HW;
    for (Index c = 0; c < Cout; ++c) {
      S acc = S(0);
      const S* row = gp + c * HW;
      for (Index i = 0; i < HW; ++i) acc += row[i];
      dBm(c) += acc;
    }
  }
}

// ----------------------------------------------------- 3x3 convs, zero pad 1

template <typename S>
Tensor<S> dwconv3x3_fwd(const Tensor<S>& x, const Tensor<S>& k,
                        const Tensor<S>& b, Index stride) {
  detail::require_rank4(x, "depthwise_conv3x3");
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(k.rank() == 3 && k.dim(0) == C && k.dim(1) == 3 &&
                      k.dim(2) == 3,
                  "depthwise_conv3x3", "kernel must be [C,3,3]");
  detail::require(b.rank() == 1 && b.dim(0) == C, "depthwise_conv3x3",
                  "bias must be [C]");
  detail::require(stride == 1 || stride == 2, "depthwise_conv3x3",
                  "stride must be 1 or 2");
  const Index Ho = detail::conv_out(H, stride), Wo = detail::conv_out(W, stride);
  Tensor<S> y(Shape{B, C, Ho, Wo});
  for (Index n = 0; n < B; ++n) {
    for (Index c = 0; c < C; ++c) {
      const S* xp = x.data() + (n * C + c) * H * W;
      const S* kp = k.data() + c * 9;
      S* yp = y.data() + (n * C + c) * Ho * Wo;
      const S bias = b[c];
      for (Index oh = 0; oh < Ho; ++oh) {
        for (Index ow = 0; ow < Wo; ++ow) {
          S acc = bias;
          const Index ih0 = oh * stride - 1, iw0 = ow * stride - 1;
          for (Index kh = 0; kh < 3; ++kh) {
            const Index ih = ih0 + kh;
            if (ih < 0 || ih >= H) continue;
            for (Index kw = 0; kw < 3; ++kw) {
              const Index iw = iw0 + kw;
              if (iw < 0 || iw >= W) continue;
              acc += kp[kh * 3 + kw] * xp[ih * W + iw];
            }
          }
          yp[oh * Wo + ow] = acc;
        }
      }
    }
  }
  return y;
}

template <typename S>
void dwconv3x3_bwd(const Tensor<S>& x, const Tensor<S>& k, Index stride,
                   const Tensor<S>& gy, Tensor<S>& dx, Tensor<S>& dk,
                   Tensor<S>& db) {
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Ho = gy.dim(2), Wo = gy.dim(3);
  for (Index n = 0; n < B; ++n) {
    for (Index c = 0; c < C; ++c) {
      const S* xp = x.data() + (n * C + c) * H * W;
      const S* kp = k.data() + c * 9;
      const S* gp = gy.data() + (n * C + c) * Ho * Wo;
      S* dxp = dx.data() + (n * C + c) * H * W;
      S* dkp = dk.data() + c * 9;
      S dbias = S(0);
      for (Index oh = 0; oh < Ho; ++oh) {
        for (Index ow = 0; ow < Wo; ++ow) {
          const S g = gp[oh * Wo + ow];
          dbias += g;
          const Index ih0 = oh * stride - 1, iw0 = ow * stride - 1;
          for (Index kh = 0; kh < 3; ++kh) {
            const Index ih = ih0 + kh;
            if (ih < 0 || ih >= H) continue;
            for (Index kw = 0; kw < 3; ++kw) {
              const Index iw = iw0 + kw;
              if (iw < 0 || iw >= W) continue;
              dxp[ih * W + iw] += kp[kh * 3 + kw] * g;
              dkp[kh * 3 + kw] += xp[ih * W + iw] * g;
            }
          }
        }
      }
      db[c] += dbias;
    }
  }
}

// Dense 3x3 conv (the stem). x: [B,Cin,H,W], w: [Cout,Cin,3,3], b: [Cout].
template <typename S>
Tensor<S> conv3x3_fwd(const Tensor<S>& x, const Tensor<S>& w,
                      const Tensor<S>& b, Index stride) {
  detail::require_rank4(x, "conv3x3");
  const Index B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(w.rank() == 4 && w.dim(1) == Cin && w.dim(2) == 3 &&
                      w.dim(3) == 3,
                  "conv3x3", "weight must be [Cout,Cin,3,3]");
  const Index Cout = w.dim(0);
  detail::require(b.rank() == 1 && b.dim(0) == Cout, "conv3x3",
                  "bias must be [Cout]");
  detail::require(stride == 1 || stride == 2, "conv3x3", "stride must be 1 or 2");
  const Index Ho = detail::conv_out(H, stride), Wo = detail::conv_out(W, stride);
  Tensor<S> y(Shape{B, Cout, Ho, Wo});
  for (Index n = 0; n < B; ++n) {
    for (Index co = 0; co < Cout; ++co) {
      S* yp = y.data() + (n * Cout + co) * Ho * Wo;
      for (Index i = 0; i < Ho * Wo; ++i) yp[i] = b[co];
      for (Index ci = 0; ci < Cin; ++ci) {
        const S* xp = x.data() + (n * Cin + ci) * H * W;
        const S* kp = w.data() + (co * Cin + ci) * 9;
        for (Index oh = 0; oh < Ho; ++oh) {
          const Index ih0 = oh * stride - 1;
          for (Index ow = 0; ow < Wo; ++ow) {
            const Index iw0 = ow * stride - 1;
            S acc = S(0);
            for (Index kh = 0; kh < 3; ++kh) {
              const Index ih = ih0 + kh;
              if (ih < 0 || ih >= H) continue;
              for (Index kw = 0; kw < 3; ++kw) {
                const Index iw = iw0 + kw;
                if (iw < 0 || iw >= W) continue;
                acc += kp[kh * 3 + kw] * xp[ih * W + iw];
              }
            }
            yp[oh * Wo + ow] += acc;
          }
        }
      }
    }
  }
  return y;
}

template <typename S>
void conv3x3_bwd(const Tensor<S>& x, const Tensor<S>& w, Index stride,
                 const Tensor<S>& gy, Tensor<S>& dx, Tensor<S>& dw,
                 Tensor<S>& db) {
  const Index B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const Index Cout = gy.dim(1), Ho = gy.dim(2), Wo = gy.dim(3);
  for (Index n = 0; n < B; ++n) {
    for (Index co = 0; co < Cout; ++co) {
      const S* gp = gy.data() + (n * Cout + co) * Ho * Wo;
      for (Index i = 0; i < Ho * Wo; ++i) db[co] += gp[i];
      for (Index ci = 0; ci < Cin; ++ci) {
        const S* xp = x.data() + (n * Cin + ci) * H * W;
        const S* kp = w.data() + (co * Cin + ci) * 9;
        S* dxp = dx.data() + (n * Cin + ci) * H * W;
        S* dkp = dw.data() + (co * Cin + ci) * 9;
        for (Index oh = 0; oh < Ho; ++oh) {
          const Index ih0 = oh * stride - 1;
          for (Index ow = 0; ow < Wo; ++ow) {
            const Index iw0 = ow * stride - 1;
            const S g = gp[oh * Wo + ow];
            for (Index kh = 0; kh < 3; ++kh) {
              const Index ih = ih0 + kh;
              if (ih < 0 || ih >= H) continue;
              for (Index kw = 0; kw < 3; ++kw) {
                const Index iw = iw0 + kw;
                if (iw < 0 || iw >= W) continue;
                dxp[ih * W + iw] += kp[kh * 3 + kw] * g;
                dkp[kh * 3 + kw] += xp[ih * W + iw] * g;
              }
            }
          }
        }
      }
    }
  }
}

// -------------------------------------------------------------- layer norm

// Normalizes over the channel axis independently at each (b,h,w), then
// applies the per-channel affine. Variance is the biased 1/C estimate.
template <typename S>
struct LayerNormCtx {
  Tensor<S> mean;     // [B, H*W]
  Tensor<S> inv_std;  // [B, H*W]
};

template <typename S>
Tensor<S> layer_norm_fwd(const Tensor<S>& x, const Tensor<S>& gamma,
                         const Tensor<S>& beta, S eps, LayerNormCtx<S>& ctx) {
  detail::require_rank4(x, "layer_norm");
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(gamma.rank() == 1 && gamma.dim(0) == C, "layer_norm",
                  "gamma must be [C]");
  detail::require(beta.rank() == 1 && beta.dim(0) == C, "layer_norm",
                  "beta must be [C]");
  const Index HW = H * W;
  ctx.mean = Tensor<S>(Shape{B, HW});
  ctx.inv_std = Tensor<S>(Shape{B, HW});
  Tensor<S> y(x.shape());
  const S invc = S(1) / static_cast<S>(C);
  for (Index n = 0; n < B; ++n) {
    S* mean = ctx.mean.data() + n * HW;
    S* inv = ctx.inv_std.data() + n * HW;
    const S* xb = x.data() + n * C * HW;
    for (Index p = 0; p < HW; ++p) mean[p] = S(0);
    for (Index c = 0; c < C; ++c) {
      const S* xc = xb + c * HW;
      for (Index p = 0; p < HW; ++p) mean[p] += xc[p];
    }
    for (Index p = 0; p < HW; ++p) mean[p] *= invc;
    for (Index p = 0; p < HW; ++p) inv[p] = S(0);
    for (Index c = 0; c < C; ++c) {
      const S* xc = xb + c * HW;
      for (Index p = 0; p < HW; ++p) {
        const S d = xc[p] - mean[p];
        inv[p] += d * d;
      }
    }
    for (Index p = 0; p < HW; ++p) {
      inv[p] = S(1) / std::sqrt(inv[p] * invc + eps);
    }
    S* yb = y.data() + n * C * HW;
    for (Index c = 0; c < C; ++c) {
      const S* xc = xb + c * HW;
      S* yc = yb + c * HW;
      const S gc = gamma[c], bc = beta[c];
      for (Index p = 0; p < HW; ++p) {
        yc[p] = (xc[p] - mean[p]) * inv[p] * gc + bc;
      }
    }
  }
  return y;
}

template <typename S>
void layer_norm_bwd(const Tensor<S>& x, const Tensor<S>& gamma,
                    const LayerNormCtx<S>& ctx, const Tensor<S>& gy,
                    Tensor<S>& dx, Tensor<S>& dgamma, Tensor<S>& dbeta) {
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  const S invc = S(1) / static_cast<S>(C);
  std::vector<S> s1(static_cast<std::size_t>(HW));
  std::vector<S> s2(static_cast<std::size_t>(HW));
  for (Index n = 0; n < B; ++n) {
    const S* mean = ctx.mean.data() + n * HW;
    const S* inv = ctx.inv_std.data() + n * HW;
    const S* xb = x.data() + n * C * HW;
    const S* gb = gy.data() + n * C * HW;
    S* dxb = dx.data() + n * C * HW;
    for (Index p = 0; p < HW; ++p) s1[static_cast<std::size_t>(p)] = S(0);
    for (Index p = 0; p < HW; ++p) s2[static_cast<std::size_t>(p)] = S(0);
    for (Index c = 0; c < C; ++c) {
      const S* xc = xb + c * HW;
      const S* gc = gb + c * HW;
      const S gam = gamma[c];
      S dg = S(0), dbta = S(0);
      for (Index p = 0; p < HW; ++p) {
        const S xhat = (xc[p] - mean[p]) * inv[p];
        const S gg = gam * gc[p];
        s1[static_cast<std::size_t>(p)] += gg;
        s2[static_cast<std::size_t>(p)] += gg * xhat;
        dg += gc[p] * xhat;
        dbta += gc[p];
      }
      dgamma[c] += dg;
      dbeta[c] += dbta;
    }
    for (Index c = 0; c < C; ++c) {
      const S* xc = xb + c * HW;
      const S* gc = gb + c * HW;
      S* dxc = dxb + c * HW;
      const S gam = gamma[c];
      for (Index p = 0; p < HW; ++p) {
        const S xhat = (xc[p] - mean[p]) * inv[p];
        dxc[p] += inv[p] * (gam * gc[p] - invc * s1[static_cast<std::size_t>(p)] -
                            xhat * invc * s2[static_cast<std::size_t>(p)]);
      }
    }
  }
}

// ------------------------------------------------------------- pool / head

template <typename S>
Tensor<S> gap_fwd(const Tensor<S>& x) {
  detail::require_rank4(x, "global_avg_pool");
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor<S> y(Shape{B, C});
  const S norm = S(1) / static_cast<S>(HW);
  for (Index n = 0; n < B; ++n) {
    for (Index c = 0; c < C; ++c) {
      const S* xp = x.data() + (n * C + c) * HW;
      S acc = S(0);
      for (Index p = 0; p < HW; ++p) acc += xp[p];
      y.at(n, c) = acc * norm;
    }
  }
  return y;
}

template <typename S>
void gap_bwd(Index H, Index W, const Tensor<S>& gy, Tensor<S>& dx) {
  const Index B = gy.dim(0), C = gy.dim(1), HW = H * W;
  const S norm = S(1) / static_cast<S>(HW);
  for (Index n = 0; n < B; ++n) {
    for (Index c = 0; c < C; ++c) {
      const S g = gy.at(n, c) * norm;
      S* dxp = dx.data() + (n * C + c) * HW;
      for (Index p = 0; p < HW; ++p) dxp[p] += g;
    }
  }
}

// x: [B,Cin], w: [K,Cin], b: [K] -> y: [B,K]
template <typename S>
Tensor<S> linear_fwd(const Tensor<S>& x, const Tensor<S>& w,
                     const Tensor<S>& b) {
  detail::require(x.rank() == 2, "linear", "input must be [B,Cin]");
  const Index B = x.dim(0), Cin = x.dim(1);
  detail::require(w.rank() == 2 && w.dim(1) == Cin, "linear",
                  "weight must be [K,Cin]");
  const Index K = w.dim(0);
  detail::require(b.rank() == 1 && b.dim(0) == K, "linear", "bias must be [K]");
  Tensor<S> y(Shape{B, K});
  const S* xp = x.data();
  const S* wp = w.data();
  const S* bp = b.data();
  S* yp = y.data();
  // plain dot products: the head is tiny and a fixed summation order keeps
  // runs bit-identical regardless of how the heap happens to align buffers
  for (Index n = 0; n < B; ++n) {
    const S* xr = xp + n * Cin;
    for (Index k = 0; k < K; ++k) {
      const S* wr = wp + k * Cin;
      S acc = bp[k];
      for (Index c = 0; c < Cin; ++c) acc += xr[c] * wr[c];
      yp[n * K + k] = acc;
    }
  }
  return y;
}

template <typename S>
void linear_bwd(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& gy,
                Tensor<S>& dx, Tensor<S>& dw, Tensor<S>& db) {
  const Index B = x.dim(0), Cin = x.dim(1), K = w.dim(0);
  Eigen::Map<const MatRM<S>> X(x.data(), B, Cin);
  Eigen::Map<const MatRM<S>> Wm(w.data(), K, Cin);
  Eigen::Map<const MatRM<S>> GY(gy.data(), B, K);
  Eigen::Map<MatRM<S>> DX(dx.data(), B, Cin);
  Eigen::Map<MatRM<S>> DW(dw.data(), K, Cin);
  Eigen::Map<VecCol<S>> DB(db.data(), K);
  DX.noalias() += GY * Wm;
  DW.noalias() += GY.transpose() * X;
  for (Index k = 0; k < K; ++k) {
    S acc = S(0);
    for (Index n = 0; n < B; ++n) acc += GY(n, k);
    DB(k) += acc;
  }
}

// ---------------------------------------------------- softmax cross entropy

// Mean over the batch of -sum_k q_k log p_k with label smoothing:
// q = (1-a)*onehot + a/K. Returns the loss; probs is filled for backward.
template <typename S>
double softmax_ce_fwd(const Tensor<S>& logits, const std::vector<int>& labels,
                      double smoothing, Tensor<S>& probs) {
  detail::require(logits.rank() == 2, "softmax_cross_entropy",
                  "logits must be [B,K]");
  const Index B = logits.dim(0), K = logits.dim(1);
  detail::require(static_cast<Index>(labels.size()) == B,
                  "softmax_cross_entropy", "label count must match batch");
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw ConfigError("softmax_cross_entropy: smoothing must be in [0,1)");
  }
  probs = Tensor<S>(logits.shape());
  double total = 0.0;
  for (Index n = 0; n < B; ++n) {
    const int lbl = labels[static_cast<std::size_t>(n)];
    if (lbl < 0 || lbl >= K) {
      throw SizeError("softmax_cross_entropy: label " + std::to_string(lbl) +
                      " out of range [0," + std::to_string(K) + ")");
    }
    const S* lp = logits.data() + n * K;
    S* pp = probs.data() + n * K;
    double mx = static_cast<double>(lp[0]);
    for (Index k = 1; k < K; ++k) mx = std::max(mx, static_cast<double>(lp[k]));
    double z = 0.0;
    for (Index k = 0; k < K; ++k) z += std::exp(static_cast<double>(lp[k]) - mx);
    const double logz = std::log(z);
    double loss = 0.0;
    const double unif = smoothing / static_cast<double>(K);
    for (Index k = 0; k < K; ++k) {
      const double logp = static_cast<double>(lp[k]) - mx - logz;
      pp[k] = static_cast<S>(std::exp(logp));
      double q = unif + (k == lbl ? 1.0 - smoothing : 0.0);
      loss -= q * logp;
    }
    total += loss;
  }
  return total / static_cast<double>(B);
}

template <typename S>
void softmax_ce_bwd(const Tensor<S>& probs, const std::vector<int>& labels,
                    double smoothing, S gloss, Tensor<S>& dlogits) {
  const Index B = probs.dim(0), K = probs.dim(1);
  const S scale = gloss / static_cast<S>(B);
  const S unif = static_cast<S>(smoothing / static_cast<double>(K));
  for (Index n = 0; n < B; ++n) {
    const int lbl = labels[static_cast<std::size_t>(n)];
    const S* pp = probs.data() + n * K;
    S* dp = dlogits.data() + n * K;
    for (Index k = 0; k < K; ++k) {
      S q = unif + (k == lbl ? S(1) - static_cast<S>(smoothing) : S(0));
      dp[k] += (pp[k] - q) * scale;
    }
  }
}

// ------------------------------------------------------------ complex ops

template <typename S>
using CTensor = Tensor<std::complex<S>>;

template <typename S>
CTensor<S> hadamard_fwd(const CTensor<S>& a, const CTensor<S>& b) {
  aff::detail::ensure_same_shape(a, b, "complex_hadamard");
  CTensor<S> y(a.shape());
  for (Index i = 0; i < a.numel(); ++i) y[i] = a[i] * b[i];
  return y;
}

// dL/da = g (.) conj(b), dL/db = g (.) conj(a)
template <typename S>
void hadamard_bwd(const CTensor<S>& a, const CTensor<S>& b, const CTensor<S>& g,
                  CTensor<S>& da, CTensor<S>& db) {
  for (Index i = 0; i < a.numel(); ++i) {
    da[i] += g[i] * std::conj(b[i]);
    db[i] += g[i] * std::conj(a[i]);
  }
}

// [B,C,H,W] complex -> [B,2C,H,W] real: channels [0,C) carry the real
// planes, [C,2C) the imaginary planes. Grouped layers over this order mix
// real with real and imag with imag within a group block.
template <typename S>
Tensor<S> complex_to_planes_fwd(const CTensor<S>& z) {
  detail::require_rank4(z, "complex_to_planes");
  const Index B = z.dim(0), C = z.dim(1), HW = z.dim(2) * z.dim(3);
  Tensor<S> y(Shape{B, 2 * C, z.dim(2), z.dim(3)});
  for (Index n = 0; n < B; ++n) {
    for (Index c = 0; c < C; ++c) {
      const std::complex<S>* zp = z.data() + (n * C + c) * HW;
      S* re = y.data() + ((n * 2 * C) + c) * HW;
      S* im = y.data() + ((n * 2 * C) + C + c) * HW;
      for (Index p = 0; p < HW; ++p) {
        re[p] = zp[p].real();
        im[p] = zp[p].imag();
      }
    }
  }
  return y;
}

template <typename S>
void complex_to_planes_bwd(const Tensor<S>& gy, CTensor<S>& dz) {
  const Index B = dz.dim(0), C = dz.dim(1), HW = dz.dim(2) * dz.dim(3);
  for (Index n = 0; n < B; ++n) {
    for (Index c = 0; c < C; ++c) {
      std::complex<S>* dzp = dz.data() + (n * C + c) * HW;
      const S* re = gy.data() + ((n * 2 * C) + c) * HW;
      const S* im = gy.data() + ((n * 2 * C) + C + c) * HW;
      for (Index p = 0; p < HW; ++p) dzp[p] += std::complex<S>(re[p], im[p]);
    }
  }
}

// [B,2C,H,W] real -> [B,C,H,W] complex (inverse plane layout of the above).
template <typename S>
CTensor<S> planes_to_complex_fwd(const Tensor<S>& x) {
  detail::require_rank4(x, "planes_to_complex");
  detail::require(x.dim(1) % 2 == 0, "planes_to_complex",
                  "channel count must be even, got " + x.shape().str());
  const Index B = x.dim(0), C = x.dim(1) / 2, HW = x.dim(2) * x.dim(3);
  CTensor<S> z(Shape{B, C, x.dim(2), x.dim(3)});
  for (Index n = 0; n < B; ++n) {
    for (Index c = 0; c < C; ++c) {
      std::complex<S>* zp = z.data() + (n * C + c) * HW;
      const S* re = x.data() + ((n * 2 * C) + c) * HW;
      const S* im = x.data() + ((n * 2 * C) + C + c) * HW;
      for (Index p = 0; p < HW; ++p) zp[p] = {re[p], im[p]};
    }
  }
  return z;
}

template <typename S>
void planes_to_complex_bwd(const CTensor<S>& gz, Tensor<S>& dx) {
  const Index B = dx.dim(0), C = dx.dim(1) / 2, HW = dx.dim(2) * dx.dim(3);
  for (Index n = 0; n < B; ++n) {
    for (Index c = 0; c < C; ++c) {
      const std::complex<S>* gp = gz.data() + (n * C + c) * HW;
      S* re = dx.data() + ((n * 2 * C) + c) * HW;
      S* im = dx.data() + ((n * 2 * C) + C + c) * HW;
      for (Index p = 0; p < HW; ++p) {
        re[p] += gp[p].real();
        im[p] += gp[p].imag();
      }
    }
  }
}

}  // namespace aff::kern

#pragma once

#include <cmath>
#include <complex>
#include <string>

#include "aff/autodiff.hpp"
#include "aff/fft.hpp"
#include "aff/init.hpp"
#include "aff/tensor.hpp"

namespace aff {

// Token mixer selector. The AFF family shares one mask-subnetwork parameter
// set; static_mask carries its own [C,H0,W0] complex mask and is therefore
// locked to the resolution it was created for.
enum class MixerKind {
  AffFft,
  AffNoFft,
  AffSum,
  StaticMask,
  SpatialSharedMask,
  Conv3x3,
  Identity,
};

inline const char* mixer_kind_name(MixerKind k) {
  switch (k) {
    case MixerKind::AffFft: return "aff";
    case MixerKind::AffNoFft: return "aff_no_fft";
    case MixerKind::AffSum: return "aff_sum";
    case MixerKind::StaticMask: return "static_mask";
    case MixerKind::SpatialSharedMask: return "spatial_shared";
    case MixerKind::Conv3x3: return "conv3x3";
    case MixerKind::Identity: return "identity";
  }
  throw ConfigError("mixer_kind_name: bad enum value");
}

inline MixerKind parse_mixer_kind(const std::string& s) {
  for (MixerKind k :
       {MixerKind::AffFft, MixerKind::AffNoFft, MixerKind::AffSum,
        MixerKind::StaticMask, MixerKind::SpatialSharedMask, MixerKind::Conv3x3,
        MixerKind::Identity}) {
    if (s == mixer_kind_name(k)) return k;
  }
  throw ConfigError("unknown mixer kind '" + s + "'");
}

// Mask subnetwork weights: two group 1x1 linear layers over the 2C stacked
// real/imag channels, ReLU between, bias on both.
template <typename S>
struct AffMixerParams {
  Tensor<S> w1, b1;  // [2C, 2C/g], [2C]
  Tensor<S> w2, b2;
  Index groups = 8;

  Index channels() const { return w1.dim(0) / 2; }
  Index param_count() const {
    return w1.numel() + b1.numel() + w2.numel() + b2.numel();
  }
};

// Closed form for the subnetwork size; enumeration tests pin the two views
// of the count against each other.
inline Index aff_mixer_param_count(Index channels, Index groups,
                                   bool bias = true) {
  const Index c2 = 2 * channels;
  return 2 * (c2 * c2 / groups) + (bias ? 2 * c2 : 0);
}

// w1, w2 ~ U(+-1/sqrt(fan_in)), biases zero, w2 damped by 0.1 so the initial
// mask sits near zero and the surrounding block starts as its skip path.
template <typename S>
AffMixerParams<S> make_aff_mixer_params(Index channels, Index groups,
                                        std::uint64_t seed) {
  const Index c2 = 2 * channels;
  if (groups < 1 || c2 % groups != 0) {
    throw ConfigError("aff mixer: groups " + std::to_string(groups) +
                      " must divide 2*channels = " + std::to_string(c2));
  }
  const Index fan_in = c2 / groups;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  AffMixerParams<S> p;
  p.groups = groups;
  Rng r1 = substream(seed, "w1");
  Rng r2 = substream(seed, "w2");
  p.w1 = uniform_symmetric<S>(Shape{c2, fan_in}, bound, r1);
  p.w2 = scale(uniform_symmetric<S>(Shape{c2, fan_in}, bound, r2),
               static_cast<S>(0.1));
  p.b1 = Tensor<S>(Shape{c2});
  p.b2 = Tensor<S>(Shape{c2});
  return p;
}

// ------------------------------------------------------- tape fragments

// M(.): stack the complex input's real/imag planes as 2C channels in the
// order [re_0..re_{C-1}, im_0..im_{C-1}], run group linear -> ReLU -> group
// linear per position, recombine into a complex mask of the input's shape.
template <typename S>
Var aff_mask(Tape<S>& t, Var xf, Var w1, Var b1, Var w2, Var b2, Index groups) {
  const Index c2 = 2 * t.cval(xf).dim(1);
  if (groups < 1 || c2 % groups != 0) {
    throw ConfigError("aff mixer: groups " + std::to_string(groups) +
                      " must divide 2*channels = " + std::to_string(c2));
  }
  Var planes = complex_to_planes(t, xf);
  Var h = relu(t, group_pointwise_linear(t, planes, w1, b1, groups));
  Var m = group_pointwise_linear(t, h, w2, b2, groups);
  return planes_to_complex(t, m);
}

// X_hat = real(ifft2(M(F(X)) hadamard F(X))): filter every channel in the
// frequency domain with a mask predicted from that same spectrum.
template <typename S>
Var aff_mixer_fft(Tape<S>& t, Var x, Var w1, Var b1, Var w2, Var b2,
                  Index groups) {
  Var xf = fft2_diff(t, embed_complex_diff(t, x));
  Var m = aff_mask(t, xf, w1, b1, w2, b2, groups);
  Var y = complex_hadamard(t, m, xf);
  return real_part_diff(t, ifft2_diff(t, y));
}

// Ablation: same subnetwork and Hadamard product, applied directly in the
// spatial domain. The imaginary planes are zero, so only the mask's real
// half reaches the output; the parameter count is unchanged.
template <typename S>
Var aff_mixer_no_fft(Tape<S>& t, Var x, Var w1, Var b1, Var w2, Var b2,
                     Index groups) {
  Var xs = embed_complex_diff(t, x);
  Var m = aff_mask(t, xs, w1, b1, w2, b2, groups);
  Var y = complex_hadamard(t, m, xs);
  return real_part_diff(t, y);
}

// Ablation: Hadamard product replaced by addition in the frequency domain.
template <typename S>
Var aff_mixer_sum(Tape<S>& t, Var x, Var w1, Var b1, Var w2, Var b2,
                  Index groups) {
  Var xf = fft2_diff(t, embed_complex_diff(t, x));
  Var m = aff_mask(t, xf, w1, b1, w2, b2, groups);
  Var y = complex_add(t, m, xf);
  return real_part_diff(t, ifft2_diff(t, y));
}

// Ablation: the predicted mask is averaged over channels before filtering,
// so every channel sees the same 1xHxW frequency response.
template <typename S>
Var spatial_shared_mixer(Tape<S>& t, Var x, Var w1, Var b1, Var w2, Var b2,
                         Index groups) {
  Var xf = fft2_diff(t, embed_complex_diff(t, x));
  Var m = aff_mask(t, xf, w1, b1, w2, b2, groups);
  Var shared = repeat_channel(t, complex_channel_mean(t, m), t.cval(xf).dim(1));
  Var y = complex_hadamard(t, shared, xf);
  return real_part_diff(t, ifft2_diff(t, y));
}

// Comparison: a trained input-independent mask. mask_re/mask_im are real
// [C,H0,W0] parameters; inputs at any other resolution are rejected.
template <typename S>
Var static_mask_mixer(Tape<S>& t, Var x, Var mask_re, Var mask_im) {
  const auto& xv = t.val(x);
  const auto& mv = t.val(mask_re);
  kern::detail::require_rank4(xv, "static_mask_mixer");
  if (mv.rank() != 3 || mv.dim(0) != xv.dim(1)) {
    throw ShapeError("static_mask_mixer: mask " + mv.shape().str() +
                     " does not match input channels of " + xv.shape().str());
  }
  if (mv.dim(1) != xv.dim(2) || mv.dim(2) != xv.dim(3)) {
    throw SizeError("static_mask_mixer: mask trained at " +
                    std::to_string(mv.dim(1)) + "x" + std::to_string(mv.dim(2)) +
                    " rejects input " + xv.shape().str());
  }
  Var mask = repeat_batch(t, make_complex_diff(t, mask_re, mask_im), xv.dim(0));
  Var xf = fft2_diff(t, embed_complex_diff(t, x));
  Var y = complex_hadamard(t, mask, xf);
  return real_part_diff(t, ifft2_diff(t, y));
}

// Comparison: plain local token mixing, depthwise 3x3 with zero padding.
template <typename S>
Var conv3x3_mixer(Tape<S>& t, Var x, Var k, Var b) {
  return depthwise_conv3x3(t, x, k, b, 1);
}

// ------------------------------------------------------- pure wrappers
// The pure entry points run the very same tape fragments on a throwaway
// tape, so there is exactly one definition of each dataflow.

template <typename S>
Tensor<S> aff_forward(const Tensor<S>& x, const AffMixerParams<S>& p) {
  Tape<S> t;
  Var y = aff_mixer_fft(t, t.input(x), t.input(p.w1), t.input(p.b1),
                        t.input(p.w2), t.input(p.b2), p.groups);
  return t.val(y);
}

// The complex mask the subnetwork predicts for x.
template <typename S>
Tensor<std::complex<S>> aff_mask_of(const Tensor<S>& x,
                                    const AffMixerParams<S>& p) {
  Tape<S> t;
  Var xf = fft2_diff(t, embed_complex_diff(t, t.input(x)));
  Var m = aff_mask(t, xf, t.input(p.w1), t.input(p.b1), t.input(p.w2),
                   t.input(p.b2), p.groups);
  return t.cval(m);
}

// The instance-adaptive depthwise kernel the mixer is equivalent to:
// K = ifft2(M(F(X))), one HxW kernel per batch element and channel.
template <typename S>
Tensor<std::complex<S>> effective_kernel(const Tensor<S>& x,
                                         const AffMixerParams<S>& p) {
  return ifft2(aff_mask_of(x, p));
}

// Direct circular depthwise convolution, the oracle side of the
// convolution-theorem identity:
//   out[b,c,h,w] = sum_{h',w'} k[b,c,h',w'] * x[b,c,(h-h') mod H, (w-w') mod W]
// Per-output double accumulation regardless of S.
template <typename S>
Tensor<S> circular_dwconv_oracle(const Tensor<S>& x, const Tensor<S>& k) {
  detail::ensure_same_shape(x, k, "circular_dwconv_oracle");
  kern::detail::require_rank4(x, "circular_dwconv_oracle");
  const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<S> out(x.shape());
  for (Index n = 0; n < B; ++n) {
    for (Index c = 0; c < C; ++c) {
      const S* xp = x.data() + (n * C + c) * H * W;
      const S* kp = k.data() + (n * C + c) * H * W;
      S* op = out.data() + (n * C + c) * H * W;
      for (Index h = 0; h < H; ++h) {
        for (Index w = 0; w < W; ++w) {
          double acc = 0.0;
          for (Index hp = 0; hp < H; ++hp) {
            const Index xh = h - hp < 0 ? h - hp + H : h - hp;
            const S* xrow = xp + xh * W;
            const S* krow = kp + hp * W;
            for (Index wp = 0; wp < W; ++wp) {
              const Index xw = w - wp < 0 ? w - wp + W : w - wp;
              acc += static_cast<double>(krow[wp]) *
                     static_cast<double>(xrow[xw]);
            }
          }
          op[h * W + w] = static_cast<S>(acc);
        }
      }
    }
  }
  return out;
}

// ------------------------------------------------- commutativity fixture

// Pointwise channel map y[b,:,h,w] = w * x[b,:,h,w] with real weights,
// applied to a real or complex tensor (the complex case maps the real and
// imaginary parts independently).
template <typename S>
Tensor<S> channel_linear(const Tensor<S>& x, const Tensor<real_scalar_t<S>>& w) {
  kern::detail::require_rank4(x, "channel_linear");
  const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (w.rank() != 2 || w.dim(0) != C || w.dim(1) != C) {
    throw ShapeError("channel_linear: weights " + w.shape().str() +
                     " do not match " + std::to_string(C) + " channels");
  }
  Tensor<S> out(x.shape());
  for (Index n = 0; n < B; ++n) {
    for (Index co = 0; co < C; ++co) {
      S* op = out.data() + (n * C + co) * HW;
      for (Index ci = 0; ci < C; ++ci) {
        const S* xp = x.data() + (n * C + ci) * HW;
        const auto wv = w.at(co, ci);
        for (Index p = 0; p < HW; ++p) op[p] += xp[p] * wv;
      }
    }
  }
  return out;
}

// Max rel err between channel_linear(fft2(x)) and fft2(channel_linear(x)).
// Channel maps touch no spatial positions, the DFT touches no channels, so
// the two orders must agree to rounding; frequency-domain pipelines built
// from linear layers therefore add nothing a spatial linear layer could not.
template <typename S>
double commutativity_check(const Tensor<S>& x, const Tensor<S>& w) {
  auto lhs = channel_linear(fft2_real(x), w);
  auto rhs = fft2_real(channel_linear(x, w));
  return max_rel_err(lhs, rhs);
}

// Negative control for the same identity: ReLU (taken on real and imaginary
// parts) does not commute with the DFT.
template <typename S>
double relu_commutativity_gap(const Tensor<S>& x) {
  auto relu_c = [](Tensor<std::complex<S>> z) {
    for (Index i = 0; i < z.numel(); ++i) {
      z[i] = {std::max(z[i].real(), S(0)), std::max(z[i].imag(), S(0))};
    }
    return z;
  };
  auto lhs = relu_c(fft2_real(x));
  auto rhs = fft2(relu_c(make_complex(x)));
  return max_rel_err(lhs, rhs);
}

// ------------------------------------------------------- variant surface

// One bag of parameters covering every MixerKind; only the fields the kind
// uses are populated.
template <typename S>
struct MixerParams {
  MixerKind kind = MixerKind::AffFft;
  AffMixerParams<S> aff;            // AFF family and spatial_shared
  Tensor<S> static_re, static_im;   // static_mask, [C,H0,W0]
  Tensor<S> conv_k, conv_b;         // conv3x3, [C,3,3] and [C]
};

template <typename S>
MixerParams<S> make_mixer_params(MixerKind kind, Index channels, Index groups,
                                 Index h0, Index w0, std::uint64_t seed) {
  MixerParams<S> p;
  p.kind = kind;
  switch (kind) {
    case MixerKind::AffFft:
    case MixerKind::AffNoFft:
    case MixerKind::AffSum:
    case MixerKind::SpatialSharedMask:
      p.aff = make_aff_mixer_params<S>(channels, groups, seed);
      break;
    case MixerKind::StaticMask:
      // zero mask: the same near-skip start the AFF family gets
      p.static_re = Tensor<S>(Shape{channels, h0, w0});
      p.static_im = Tensor<S>(Shape{channels, h0, w0});
      break;
    case MixerKind::Conv3x3:
      p.conv_k = Tensor<S>(Shape{channels, 3, 3});
      p.conv_b = Tensor<S>(Shape{channels});
      break;
    case MixerKind::Identity:
      break;
  }
  return p;
}

template <typename S>
Var variant_mixer(Tape<S>& t, Var x, const MixerParams<S>& p) {
  switch (p.kind) {
    case MixerKind::AffFft:
      return aff_mixer_fft(t, x, t.input(p.aff.w1), t.input(p.aff.b1),
                           t.input(p.aff.w2), t.input(p.aff.b2), p.aff.groups);
    case MixerKind::AffNoFft:
      return aff_mixer_no_fft(t, x, t.input(p.aff.w1), t.input(p.aff.b1),
                              t.input(p.aff.w2), t.input(p.aff.b2),
                              p.aff.groups);
    case MixerKind::AffSum:
      return aff_mixer_sum(t, x, t.input(p.aff.w1), t.input(p.aff.b1),
                           t.input(p.aff.w2), t.input(p.aff.b2), p.aff.groups);
    case MixerKind::SpatialSharedMask:
      return spatial_shared_mixer(t, x, t.input(p.aff.w1), t.input(p.aff.b1),
                                  t.input(p.aff.w2), t.input(p.aff.b2),
                                  p.aff.groups);
    case MixerKind::StaticMask:
      return static_mask_mixer(t, x, t.input(p.static_re),
                               t.input(p.static_im));
    case MixerKind::Conv3x3:
      return conv3x3_mixer(t, x, t.input(p.conv_k), t.input(p.conv_b));
    case MixerKind::Identity:
      return x;
  }
  throw ConfigError("variant_mixer: bad enum value");
}

template <typename S>
Tensor<S> variant_forward(const Tensor<S>& x, const MixerParams<S>& p) {
  Tape<S> t;
  return t.val(variant_mixer(t, t.input(x), p));
}

// Spatial-domain kernel of the frequency-filtering variants, for witness
// tests and kernel dumps. Only kinds that filter in the frequency domain
// have one.
template <typename S>
Tensor<std::complex<S>> variant_kernel(const Tensor<S>& x,
                                       const MixerParams<S>& p) {
  switch (p.kind) {
    case MixerKind::AffFft:
      return effective_kernel(x, p.aff);
    case MixerKind::SpatialSharedMask: {
      Tape<S> t;
      Var xf = fft2_diff(t, embed_complex_diff(t, t.input(x)));
      Var m = aff_mask(t, xf, t.input(p.aff.w1), t.input(p.aff.b1),
                       t.input(p.aff.w2), t.input(p.aff.b2), p.aff.groups);
      Var shared =
          repeat_channel(t, complex_channel_mean(t, m), t.cval(xf).dim(1));
      return ifft2(t.cval(shared));
    }
    case MixerKind::StaticMask: {
      auto mask = make_complex(p.static_re, p.static_im);
      Tensor<std::complex<S>> rep(
          Shape{x.dim(0), mask.dim(0), mask.dim(1), mask.dim(2)});
      const Index chw = mask.numel();
      for (Index n = 0; n < x.dim(0); ++n) {
        for (Index i = 0; i < chw; ++i) rep[n * chw + i] = mask[i];
      }
      return ifft2(rep);
    }
    default:
      throw ConfigError(std::string("variant_kernel: ") +
                        mixer_kind_name(p.kind) +
                        " has no frequency-domain kernel");
  }
}

}  // namespace aff

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "aff/mixers.hpp"

namespace aff {

// Fully determines a model: a convolution stem (3x3 stride-2 conv followed
// by MBConv layers), three stages of [stride-2 MBConv downsample, n_i AFF
// blocks], then global average pool and a linear classifier.
struct AffNetConfig {
  std::vector<Index> stem_channels;  // conv output, then one per stem MBConv
  std::vector<Index> stem_strides;   // parallel to stem_channels
  std::vector<Index> stage_channels;
  std::vector<Index> stage_blocks;
  MixerKind mixer = MixerKind::AffFft;
  Index groups = 8;
  Index mbconv_expansion = 4;
  Index num_classes = 10;
  Index input_resolution = 32;
};

// Desk-scale default: mixers run at 8x8 / 4x4 / 2x2 on 32x32 inputs.
inline AffNetConfig affnet_micro(MixerKind mixer = MixerKind::AffFft,
                                 Index num_classes = 10) {
  AffNetConfig c;
  c.stem_channels = {16, 16, 32};
  c.stem_strides = {2, 1, 1};
  c.stage_channels = {32, 64, 96};
  c.stage_blocks = {2, 4, 3};
  c.mixer = mixer;
  c.num_classes = num_classes;
  c.input_resolution = 32;
  return c;
}

// Published channel plans (constructible; not trained here). The stem is a
// stride-2 conv plus four MBConv layers, the first of which carries the
// second stride-2 step implied by the resolution column of the model table.
inline AffNetConfig affnet_full(const std::string& name) {
  AffNetConfig c;
  c.stem_strides = {2, 2, 1, 1, 1};
  c.stage_blocks = {2, 4, 3};
  c.num_classes = 1000;
  c.input_resolution = 256;
  if (name == "affnet") {
    c.stem_channels = {32, 64, 64, 64, 64};
    c.stage_channels = {128, 256, 320};
  } else if (name == "affnet_t") {
    c.stem_channels = {32, 48, 48, 48, 48};
    c.stage_channels = {96, 160, 192};
  } else if (name == "affnet_et") {
    c.stem_channels = {32, 48, 48, 48, 48};
    c.stage_channels = {64, 104, 144};
  } else {
    throw ConfigError("affnet_full: unknown preset '" + name + "'");
  }
  return c;
}

// ------------------------------------------------------------ layer plan

struct MbConvPlan {
  std::string prefix;
  Index cin = 0, cout = 0, stride = 1, res_in = 0;
};

struct BlockPlan {
  std::string prefix;
  Index channels = 0, resolution = 0;
};

struct NetPlan {
  Index stem_conv_out = 0, stem_conv_res_out = 0;
  std::vector<MbConvPlan> stem_mbs;
  struct Stage {
    MbConvPlan down;
    std::vector<BlockPlan> blocks;
  };
  std::vector<Stage> stages;
  Index head_channels = 0, head_resolution = 0;
};

inline bool mixer_uses_subnet(MixerKind k) {
  return k == MixerKind::AffFft || k == MixerKind::AffNoFft ||
         k == MixerKind::AffSum || k == MixerKind::SpatialSharedMask;
}

// Resolves and validates the static structure the builder, the forward pass
// and the FLOP counter all walk.
inline NetPlan make_plan(const AffNetConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError("AffNetConfig: " + msg); };
  if (cfg.stem_channels.empty()) fail("stem_channels must not be empty");
  if (cfg.stem_channels.size() != cfg.stem_strides.size()) {
    fail("stem_channels and stem_strides differ in length");
  }
  if (cfg.stage_channels.empty() ||
      cfg.stage_channels.size() != cfg.stage_blocks.size()) {
    fail("stage_channels and stage_blocks must be non-empty and equal length");
  }
  for (Index c : cfg.stem_channels) {
    if (c < 1) fail("stem channel counts must be >= 1");
  }
  for (std::size_t i = 0; i < cfg.stage_channels.size(); ++i) {
    if (cfg.stage_channels[i] < 1) fail("stage channel counts must be >= 1");
    if (cfg.stage_blocks[i] < 1) fail("stage block counts must be >= 1");
  }
  if (cfg.mbconv_expansion < 1) fail("mbconv_expansion must be >= 1");
  if (cfg.num_classes < 2) fail("num_classes must be >= 2");
  if (cfg.input_resolution < 2) fail("input_resolution must be >= 2");
  if (mixer_uses_subnet(cfg.mixer)) {
    for (Index c : cfg.stage_channels) {
      if (cfg.groups < 1 || (2 * c) % cfg.groups != 0) {
        fail("groups=" + std::to_string(cfg.groups) +
             " must divide 2*channels=" + std::to_string(2 * c));
      }
    }
  }

  NetPlan plan;
  Index r = cfg.input_resolution;
  // stem conv
  if (cfg.stem_strides[0] != 2) fail("stem conv stride must be 2");
  if (r % 2 != 0) fail("input_resolution must be even for the stem conv");
  r /= 2;
  plan.stem_conv_out = cfg.stem_channels[0];
  plan.stem_conv_res_out = r;
  Index cin = cfg.stem_channels[0];
  for (std::size_t i = 1; i < cfg.stem_channels.size(); ++i) {
    MbConvPlan mb;
    mb.prefix = "stem.mb" + std::to_string(i);
    mb.cin = cin;
    mb.cout = cfg.stem_channels[i];
    mb.stride = cfg.stem_strides[i];
    mb.res_in = r;
    if (mb.stride == 2) {
      if (r % 2 != 0) fail("stem: odd resolution before stride-2 MBConv");
      r /= 2;
    } else if (mb.stride != 1) {
      fail("stem strides must be 1 or 2");
    }
    plan.stem_mbs.push_back(std::move(mb));
    cin = cfg.stem_channels[i];
  }
  if (!is_pow2(r)) {
    fail("resolution after stem is " + std::to_string(r) +
         ", not a power of two");
  }
  for (std::size_t g = 0; g < cfg.stage_channels.size(); ++g) {
    NetPlan::Stage st;
    st.down.prefix = "s" + std::to_string(g) + ".ds";
    st.down.cin = cin;
    st.down.cout = cfg.stage_channels[g];
    st.down.stride = 2;
    st.down.res_in = r;
    if (r % 2 != 0 || r < 2) {
      fail("stage " + std::to_string(g) + ": cannot downsample resolution " +
           std::to_string(r));
    }
    r /= 2;
    if (!is_pow2(r)) {
      fail("stage " + std::to_string(g) + ": resolution " + std::to_string(r) +
           " is not a power of two");
    }
    cin = cfg.stage_channels[g];
    for (Index b = 0; b < cfg.stage_blocks[g]; ++b) {
      BlockPlan bp;
      bp.prefix = "s" + std::to_string(g) + ".b" + std::to_string(b);
      bp.channels = cin;
      bp.resolution = r;
      st.blocks.push_back(std::move(bp));
    }
    plan.stages.push_back(std::move(st));
  }
  plan.head_channels = cin;
  plan.head_resolution = r;
  return plan;
}

// --------------------------------------------------------- registration

namespace netdetail {

template <typename S>
void add_kaiming(ParamStore<S>& ps, std::uint64_t seed, const std::string& name,
                 Shape shape, Index fan_in) {
  Rng r = substream(seed, name);
  ps.add(name, kaiming_normal<S>(std::move(shape), fan_in, r));
}

template <typename S>
void add_zeros(ParamStore<S>& ps, const std::string& name, Shape shape) {
  ps.add(name, Tensor<S>(std::move(shape)));
}

template <typename S>
void add_layer_norm(ParamStore<S>& ps, const std::string& prefix, Index c) {
  ps.add(prefix + ".gamma", Tensor<S>::full(Shape{c}, S(1)));
  ps.add(prefix + ".beta", Tensor<S>(Shape{c}));
}

template <typename S>
void add_mbconv(ParamStore<S>& ps, std::uint64_t seed, const MbConvPlan& mb,
                Index expansion) {
  const Index mid = mb.cin * expansion;
  add_kaiming(ps, seed, mb.prefix + ".expand.w", Shape{mid, mb.cin}, mb.cin);
  add_zeros<S>(ps, mb.prefix + ".expand.b", Shape{mid});
  add_kaiming(ps, seed, mb.prefix + ".dw.k", Shape{mid, 3, 3}, Index{9});
  add_zeros<S>(ps, mb.prefix + ".dw.b", Shape{mid});
  add_kaiming(ps, seed, mb.prefix + ".proj.w", Shape{mb.cout, mid}, mid);
  add_zeros<S>(ps, mb.prefix + ".proj.b", Shape{mb.cout});
}

// Mask subnetwork: w1, w2 ~ U(+-1/sqrt(fan_in)), biases zero, w2 damped by
// 0.1 so every mixer starts close to a no-op and blocks begin as skips. The
// static mask and the conv mixer start at exactly zero for the same reason.
template <typename S>
void add_mixer(ParamStore<S>& ps, std::uint64_t seed, const BlockPlan& bp,
               MixerKind kind, Index groups) {
  const std::string p = bp.prefix + ".mixer";
  if (mixer_uses_subnet(kind)) {
    const Index c2 = 2 * bp.channels;
    const Index fan_in = c2 / groups;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Rng r1 = substream(seed, p + ".w1");
    Rng r2 = substream(seed, p + ".w2");
    ps.add(p + ".w1", uniform_symmetric<S>(Shape{c2, fan_in}, bound, r1));
    add_zeros<S>(ps, p + ".b1", Shape{c2});
    ps.add(p + ".w2", scale(uniform_symmetric<S>(Shape{c2, fan_in}, bound, r2),
                            static_cast<S>(0.1)));
    add_zeros<S>(ps, p + ".b2", Shape{c2});
  } else if (kind == MixerKind::StaticMask) {
    add_zeros<S>(ps, p + ".mask_re",
                 Shape{bp.channels, bp.resolution, bp.resolution});
    add_zeros<S>(ps, p + ".mask_im",
                 Shape{bp.channels, bp.resolution, bp.resolution});
  } else if (kind == MixerKind::Conv3x3) {
    add_zeros<S>(ps, p + ".k", Shape{bp.channels, 3, 3});
    add_zeros<S>(ps, p + ".b", Shape{bp.channels});
  }
  // Identity: no mixer parameters
}

}  // namespace netdetail

template <typename S>
struct Model {
  AffNetConfig cfg;
  ParamStore<S> store;
};

// Every parameter is drawn from substream(seed, its full name), so the
// initialization is a pure function of (seed, name) and independent of
// registration order.
template <typename S>
Model<S> build_affnet(const AffNetConfig& cfg, std::uint64_t seed) {
  const NetPlan plan = make_plan(cfg);
  Model<S> m;
  m.cfg = cfg;
  ParamStore<S>& ps = m.store;
  netdetail::add_kaiming(ps, seed, "stem.conv.w",
                         Shape{plan.stem_conv_out, 3, 3, 3}, Index{27});
  netdetail::add_zeros<S>(ps, "stem.conv.b", Shape{plan.stem_conv_out});
  for (const MbConvPlan& mb : plan.stem_mbs) {
    netdetail::add_mbconv(ps, seed, mb, cfg.mbconv_expansion);
  }
  for (const NetPlan::Stage& st : plan.stages) {
    netdetail::add_mbconv(ps, seed, st.down, cfg.mbconv_expansion);
    for (const BlockPlan& bp : st.blocks) {
      netdetail::add_layer_norm<S>(ps, bp.prefix + ".ln1", bp.channels);
      netdetail::add_mbconv(
          ps, seed,
          MbConvPlan{bp.prefix + ".mb", bp.channels, bp.channels, 1,
                     bp.resolution},
          cfg.mbconv_expansion);
      // ln2 is registered for every mixer kind, the Identity model included,
      // so that swapping mixers changes the parameter count by exactly the
      // mixer's own parameters.
      netdetail::add_layer_norm<S>(ps, bp.prefix + ".ln2", bp.channels);
      netdetail::add_mixer(ps, seed, bp, cfg.mixer, cfg.groups);
    }
  }
  netdetail::add_kaiming(ps, seed, "head.fc.w",
                         Shape{cfg.num_classes, plan.head_channels},
                         plan.head_channels);
  netdetail::add_zeros<S>(ps, "head.fc.b", Shape{cfg.num_classes});
  return m;
}

// ------------------------------------------------------------- forward

// oracle routes every AffFft mixer through the direct circular-convolution
// oracle with its effective kernel (forward only, no gradients); normal is
// the production frequency-domain path.
enum class MixerRoute { normal, oracle };

// own_residual follows the MobileNetV2 convention (skip when stride 1 and
// the channel count is unchanged); block_fragment disables it because the
// block equation supplies that skip itself.
template <typename S>
Var mbconv_fragment(Tape<S>& t, Var x, const std::string& p, Index cin,
                    Index cout, Index stride, bool own_residual = true) {
  Var h = pointwise_conv(t, x, t.param(p + ".expand.w"),
                         t.param(p + ".expand.b"));
  h = relu6(t, h);
  h = depthwise_conv3x3(t, h, t.param(p + ".dw.k"), t.param(p + ".dw.b"),
                        stride);
  h = relu6(t, h);
  h = pointwise_conv(t, h, t.param(p + ".proj.w"), t.param(p + ".proj.b"));
  if (own_residual && stride == 1 && cin == cout) h = add(t, h, x);
  return h;
}

// Channel-mixing half of the block: xhat = MBConv(LN(x)) + x.
template <typename S>
Var block_channel_half(Tape<S>& t, Var x, const BlockPlan& bp) {
  Var h = layer_norm(t, x, t.param(bp.prefix + ".ln1.gamma"),
                     t.param(bp.prefix + ".ln1.beta"));
  h = mbconv_fragment(t, h, bp.prefix + ".mb", bp.channels, bp.channels, 1,
                      /*own_residual=*/false);
  return add(t, h, x);
}

// Channel mixing then token mixing, both pre-normalized and residual:
//   xhat = MBConv(LN(x)) + x ; out = Mixer(LN(xhat)) + xhat
// The Identity kind drops the token-mixing term entirely, so the block
// degenerates to its channel-mixing half.
template <typename S>
Var block_fragment(Tape<S>& t, Var x, const BlockPlan& bp,
                   const AffNetConfig& cfg, MixerRoute route) {
  Var xhat = block_channel_half(t, x, bp);
  if (cfg.mixer == MixerKind::Identity) return xhat;

  Var n2 = layer_norm(t, xhat, t.param(bp.prefix + ".ln2.gamma"),
                      t.param(bp.prefix + ".ln2.beta"));
  const std::string mp = bp.prefix + ".mixer";
  Var mixed;
  if (route == MixerRoute::oracle && cfg.mixer == MixerKind::AffFft) {
    AffMixerParams<S> params;
    params.groups = cfg.groups;
    params.w1 = t.store()->value(mp + ".w1");
    params.b1 = t.store()->value(mp + ".b1");
    params.w2 = t.store()->value(mp + ".w2");
    params.b2 = t.store()->value(mp + ".b2");
    const Tensor<S>& n2v = t.val(n2);
    auto K = real_part(effective_kernel(n2v, params));
    mixed = t.input(circular_dwconv_oracle(n2v, K));
  } else {
    switch (cfg.mixer) {
      case MixerKind::AffFft:
        mixed = aff_mixer_fft(t, n2, t.param(mp + ".w1"), t.param(mp + ".b1"),
                              t.param(mp + ".w2"), t.param(mp + ".b2"),
                              cfg.groups);
        break;
      case MixerKind::AffNoFft:
        mixed = aff_mixer_no_fft(t, n2, t.param(mp + ".w1"),
                                 t.param(mp + ".b1"), t.param(mp + ".w2"),
                                 t.param(mp + ".b2"), cfg.groups);
        break;
      case MixerKind::AffSum:
        mixed = aff_mixer_sum(t, n2, t.param(mp + ".w1"), t.param(mp + ".b1"),
                              t.param(mp + ".w2"), t.param(mp + ".b2"),
                              cfg.groups);
        break;
      case MixerKind::SpatialSharedMask:
        mixed = spatial_shared_mixer(t, n2, t.param(mp + ".w1"),
                                     t.param(mp + ".b1"), t.param(mp + ".w2"),
                                     t.param(mp + ".b2"), cfg.groups);
        break;
      case MixerKind::StaticMask:
        mixed = static_mask_mixer(t, n2, t.param(mp + ".mask_re"),
                                  t.param(mp + ".mask_im"));
        break;
      case MixerKind::Conv3x3:
        mixed = conv3x3_mixer(t, n2, t.param(mp + ".k"), t.param(mp + ".b"));
        break;
      case MixerKind::Identity:
        throw ConfigError("block_fragment: unreachable mixer kind");
    }
  }
  return add(t, mixed, xhat);
}

template <typename S>
Var model_fragment(Tape<S>& t, const AffNetConfig& cfg, Var images,
                   MixerRoute route = MixerRoute::normal) {
  const NetPlan plan = make_plan(cfg);
  const auto& xv = t.val(images);
  kern::detail::require_rank4(xv, "model_fragment");
  if (xv.dim(1) != 3 || xv.dim(2) != cfg.input_resolution ||
      xv.dim(3) != cfg.input_resolution) {
    throw ShapeError("model_fragment: expected [B,3," +
                     std::to_string(cfg.input_resolution) + "," +
                     std::to_string(cfg.input_resolution) + "], got " +
                     xv.shape().str());
  }
  Var h = conv3x3(t, images, t.param("stem.conv.w"), t.param("stem.conv.b"),
                  Index{2});
  h = relu6(t, h);
  for (const MbConvPlan& mb : plan.stem_mbs) {
    h = mbconv_fragment(t, h, mb.prefix, mb.cin, mb.cout, mb.stride);
  }
  for (const NetPlan::Stage& st : plan.stages) {
    h = mbconv_fragment(t, h, st.down.prefix, st.down.cin, st.down.cout,
                        st.down.stride);
    for (const BlockPlan& bp : st.blocks) {
      h = block_fragment(t, h, bp, cfg, route);
    }
  }
  h = global_avg_pool(t, h);
  return linear(t, h, t.param("head.fc.w"), t.param("head.fc.b"));
}

template <typename S>
Tensor<S> model_forward(Model<S>& m, const Tensor<S>& images,
                        MixerRoute route = MixerRoute::normal) {
  Tape<S> t(&m.store);
  return t.val(model_fragment(t, m.cfg, t.input(images), route));
}

// The per-channel spatial kernels the network's first token-mixing block
// applies to `images`: the model runs up to that block's second
// normalization, whose output feeds the mixer's kernel extraction.
// Returns [B, C, H, W] at the first stage's channel count and resolution;
// mixer kinds without a frequency-domain kernel are rejected.
template <typename S>
Tensor<std::complex<S>> first_block_kernels(Model<S>& m,
                                            const Tensor<S>& images) {
  const AffNetConfig& cfg = m.cfg;
  const NetPlan plan = make_plan(cfg);
  Tape<S> t(&m.store);
  Var x = t.input(images);
  const auto& xv = t.val(x);
  kern::detail::require_rank4(xv, "first_block_kernels");
  if (xv.dim(1) != 3 || xv.dim(2) != cfg.input_resolution ||
      xv.dim(3) != cfg.input_resolution) {
    throw ShapeError("first_block_kernels: expected [B,3," +
                     std::to_string(cfg.input_resolution) + "," +
                     std::to_string(cfg.input_resolution) + "], got " +
                     xv.shape().str());
  }
  Var h = conv3x3(t, x, t.param("stem.conv.w"), t.param("stem.conv.b"),
                  Index{2});
  h = relu6(t, h);
  for (const MbConvPlan& mb : plan.stem_mbs) {
    h = mbconv_fragment(t, h, mb.prefix, mb.cin, mb.cout, mb.stride);
  }
  const NetPlan::Stage& st = plan.stages.front();
  h = mbconv_fragment(t, h, st.down.prefix, st.down.cin, st.down.cout,
                      st.down.stride);
  const BlockPlan& bp = st.blocks.front();
  Var xhat = block_channel_half(t, h, bp);
  Var n2 = layer_norm(t, xhat, t.param(bp.prefix + ".ln2.gamma"),
                      t.param(bp.prefix + ".ln2.beta"));

  const std::string mp = bp.prefix + ".mixer";
  MixerParams<S> params;
  params.kind = cfg.mixer;
  switch (cfg.mixer) {
    case MixerKind::AffFft:
    case MixerKind::AffNoFft:
    case MixerKind::AffSum:
    case MixerKind::SpatialSharedMask:
      params.aff.groups = cfg.groups;
      params.aff.w1 = t.store()->value(mp + ".w1");
      params.aff.b1 = t.store()->value(mp + ".b1");
      params.aff.w2 = t.store()->value(mp + ".w2");
      params.aff.b2 = t.store()->value(mp + ".b2");
      break;
    case MixerKind::StaticMask:
      params.static_re = t.store()->value(mp + ".mask_re");
      params.static_im = t.store()->value(mp + ".mask_im");
      break;
    default:
      break;
  }
  return variant_kernel(t.val(n2), params);
}

// ---------------------------------------------------------- accounting

template <typename S>
Index count_params(const Model<S>& m) {
  return m.store.scalar_count();
}

// FLOP conventions, used consistently by the model counter and the scaling
// benchmark: one multiply-accumulate = 2 FLOPs; one 2D FFT or inverse FFT
// over an HxW complex plane = 5*HW*log2(HW); one complex Hadamard product =
// 6 FLOPs per element; ReLU = 1 FLOP per element. LayerNorm, pooling and
// residual adds are omitted (sub-percent at these shapes).
inline std::int64_t fft_plane_flops(Index h, Index w) {
  const double hw = static_cast<double>(h * w);
  return static_cast<std::int64_t>(5.0 * hw * std::log2(hw));
}

inline std::int64_t mixer_flops(MixerKind kind, Index c, Index h, Index w,
                                Index groups) {
  const Index hw = h * w;
  const Index c2 = 2 * c;
  const std::int64_t transforms = 2 * c * fft_plane_flops(h, w);
  const std::int64_t subnet = 2 * (2 * hw * c2 * (c2 / groups))  // two MACs->FLOPs layers
                              + c2 * hw;                         // ReLU between
  const std::int64_t had = 6 * c * hw;
  switch (kind) {
    case MixerKind::AffFft: return transforms + subnet + had;
    case MixerKind::AffNoFft: return subnet + had;
    case MixerKind::AffSum: return transforms + subnet + 2 * c * hw;
    case MixerKind::SpatialSharedMask:
      return transforms + subnet + had + 2 * c * hw;  // channel mean
    case MixerKind::StaticMask: return transforms + had;
    case MixerKind::Conv3x3: return 2 * c * 9 * hw;
    case MixerKind::Identity: return 0;
  }
  throw ConfigError("mixer_flops: bad enum value");
}

// Direct global circular depthwise convolution at the same size: HW taps
// per output position per channel.
inline std::int64_t direct_global_conv_flops(Index c, Index h, Index w) {
  const std::int64_t hw = h * w;
  return 2 * c * hw * hw;
}

namespace netdetail {

inline std::int64_t mbconv_flops(const MbConvPlan& mb, Index expansion) {
  const Index mid = mb.cin * expansion;
  const Index hw_in = mb.res_in * mb.res_in;
  const Index res_out = mb.stride == 2 ? mb.res_in / 2 : mb.res_in;
  const Index hw_out = res_out * res_out;
  std::int64_t macs = hw_in * mb.cin * mid      // expand
                      + hw_out * 9 * mid        // depthwise
                      + hw_out * mid * mb.cout;  // project
  return 2 * macs;
}

}  // namespace netdetail

inline std::int64_t count_flops(const AffNetConfig& cfg) {
  const NetPlan plan = make_plan(cfg);
  const Index r0 = plan.stem_conv_res_out;
  std::int64_t total = 2 * (r0 * r0 * plan.stem_conv_out * Index{27});
  for (const MbConvPlan& mb : plan.stem_mbs) {
    total += netdetail::mbconv_flops(mb, cfg.mbconv_expansion);
  }
  for (const NetPlan::Stage& st : plan.stages) {
    total += netdetail::mbconv_flops(st.down, cfg.mbconv_expansion);
    for (const BlockPlan& bp : st.blocks) {
      total += netdetail::mbconv_flops(
          MbConvPlan{bp.prefix, bp.channels, bp.channels, 1, bp.resolution},
          cfg.mbconv_expansion);
      total += mixer_flops(cfg.mixer, bp.channels, bp.resolution,
                           bp.resolution, cfg.groups);
    }
  }
  total += 2 * (plan.head_channels * cfg.num_classes);
  return total;
}

}  // namespace aff

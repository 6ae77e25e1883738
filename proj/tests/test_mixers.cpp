#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "aff/gradcheck.hpp"
#include "aff/mixers.hpp"
#include "test_util.hpp"

using namespace aff;

namespace {

// groups pick per channel count: the default 8 when it divides 2C, else the
// largest power of two that does
Index groups_for(Index channels) {
  Index g = 8;
  while (g > 1 && (2 * channels) % g != 0) g /= 2;
  return g;
}

AffMixerParams<double> identity_mask_params(Index channels, Index groups) {
  // w1 = w2 = 0, b2 = [1...1, 0...0]: the subnetwork outputs 1+0i for every
  // frequency regardless of the input.
  const Index c2 = 2 * channels;
  AffMixerParams<double> p;
  p.groups = groups;
  p.w1 = Tensor<double>(Shape{c2, c2 / groups});
  p.w2 = Tensor<double>(Shape{c2, c2 / groups});
  p.b1 = Tensor<double>::full(Shape{c2}, 0.3);
  p.b2 = Tensor<double>(Shape{c2});
  for (Index c = 0; c < channels; ++c) p.b2[c] = 1.0;
  return p;
}

}  // namespace

TEST_CASE("circular conv oracle: delta kernels") {
  auto x = testutil::random_real<double>(Shape{1, 2, 3, 4}, 1);
  Tensor<double> k(x.shape());
  for (Index c = 0; c < 2; ++c) k.at(Index{0}, c, Index{0}, Index{0}) = 1.0;
  auto y = circular_dwconv_oracle(x, k);
  CHECK(max_rel_err(y, x) == 0.0);

  // delta at (0,1) shifts one column to the right, wrapping around
  Tensor<double> ks(x.shape());
  for (Index c = 0; c < 2; ++c) ks.at(Index{0}, c, Index{0}, Index{1}) = 1.0;
  auto ys = circular_dwconv_oracle(x, ks);
  for (Index c = 0; c < 2; ++c) {
    for (Index h = 0; h < 3; ++h) {
      for (Index w = 0; w < 4; ++w) {
        CHECK(ys.at(Index{0}, c, h, w) ==
              x.at(Index{0}, c, h, (w + 3) % 4));
      }
    }
  }

  CHECK_THROWS_AS(
      circular_dwconv_oracle(x, Tensor<double>(Shape{1, 2, 4, 3})),
      ShapeError);
}

TEST_CASE("circular conv oracle agrees with the spectral route") {
  for (std::uint64_t seed : {2u, 3u}) {
    auto x = testutil::random_real<double>(Shape{1, 2, 8, 8}, seed);
    auto k = testutil::random_real<double>(Shape{1, 2, 8, 8}, seed + 10);
    auto direct = circular_dwconv_oracle(x, k);
    auto spectral = real_part(ifft2(mul(fft2_real(k), fft2_real(x))));
    CHECK(max_rel_err(direct, spectral) < 1e-12);
  }
}

TEST_CASE("channel maps commute with the DFT, ReLU does not") {
  auto x = testutil::random_real<double>(Shape{1, 4, 8, 8}, 5);
  Tensor<double> eye(Shape{4, 4});
  for (Index c = 0; c < 4; ++c) eye.at(c, c) = 1.0;
  CHECK(commutativity_check(x, eye) == 0.0);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto xs = testutil::random_real<double>(Shape{1, 4, 8, 8}, 100 + seed);
    auto w = testutil::random_real<double>(Shape{4, 4}, 200 + seed);
    CHECK(commutativity_check(xs, w) <= 1e-10);
  }

  CHECK(relu_commutativity_gap(x) >= 1e-3);
}

TEST_CASE("all-ones mask makes the mixer an identity") {
  auto p = identity_mask_params(4, 8);
  auto x = testutil::random_real<double>(Shape{2, 4, 8, 8}, 7);
  CHECK(max_rel_err(aff_forward(x, p), x) < 1e-12);

  // and its effective kernel is the unit impulse at (0,0), per channel
  auto K = effective_kernel(x, p);
  for (Index n = 0; n < 2; ++n) {
    for (Index c = 0; c < 4; ++c) {
      for (Index h = 0; h < 8; ++h) {
        for (Index w = 0; w < 8; ++w) {
          const auto v = K.at(n, c, h, w);
          const double want = (h == 0 && w == 0) ? 1.0 : 0.0;
          CHECK(std::abs(v - std::complex<double>(want, 0.0)) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("frequency filtering equals circular conv with the effective kernel") {
  const Shape shapes[] = {Shape{1, 2, 4, 4}, Shape{1, 4, 8, 8},
                          Shape{2, 8, 16, 16}};
  for (const Shape& shp : shapes) {
    const Index C = shp.dim(1);
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      auto x = testutil::random_real<double>(shp, seed * 1000 + C);
      auto p = make_aff_mixer_params<double>(C, groups_for(C), seed);
      auto lhs = aff_forward(x, p);
      auto K = real_part(effective_kernel(x, p));
      auto rhs = circular_dwconv_oracle(x, K);
      CHECK(max_rel_err(lhs, rhs) <= 1e-10);
    }
  }
}

TEST_CASE("equivalence also holds in 32-bit") {
  auto x64 = testutil::random_real<double>(Shape{1, 4, 8, 8}, 17);
  auto p64 = make_aff_mixer_params<double>(4, 8, 17);
  auto x = x64.cast<float>();
  AffMixerParams<float> p{p64.w1.cast<float>(), p64.b1.cast<float>(),
                          p64.w2.cast<float>(), p64.b2.cast<float>(),
                          p64.groups};
  auto lhs = aff_forward(x, p);
  auto rhs = circular_dwconv_oracle(x, real_part(effective_kernel(x, p)));
  CHECK(max_rel_err(lhs, rhs) <= 1e-4);
}

TEST_CASE("one parameter set serves multiple resolutions") {
  auto p = make_aff_mixer_params<double>(4, 8, 9);
  auto x8 = testutil::random_real<double>(Shape{1, 4, 8, 8}, 21);
  auto x16 = testutil::random_real<double>(Shape{1, 4, 16, 16}, 22);
  CHECK(aff_forward(x8, p).shape() == x8.shape());
  CHECK(aff_forward(x16, p).shape() == x16.shape());

  // non-power-of-two spatial size is rejected by the transform planner
  auto x12 = testutil::random_real<double>(Shape{1, 4, 12, 12}, 23);
  CHECK_THROWS_AS(aff_forward(x12, p), PlanError);
  // group count must divide the stacked channel count
  auto bad = p;
  bad.groups = 3;
  CHECK_THROWS_AS(aff_forward(x8, bad), ConfigError);
}

TEST_CASE("effective kernel adapts to the input") {
  auto p = make_aff_mixer_params<double>(4, 8, 11);
  auto xa = testutil::random_real<double>(Shape{1, 4, 8, 8}, 30);
  auto xb = testutil::random_real<double>(Shape{1, 4, 8, 8}, 31);
  auto Ka = real_part(effective_kernel(xa, p));
  auto Kb = real_part(effective_kernel(xb, p));
  CHECK(max_abs(sub(Ka, Kb)) > 1e-3);
}

TEST_CASE("effective kernel is channel-specific") {
  auto p = make_aff_mixer_params<double>(4, 8, 13);
  auto x = testutil::random_real<double>(Shape{1, 4, 8, 8}, 33);
  auto K = effective_kernel(x, p);
  const Index HW = 64;
  double chan_gap = 0.0;
  for (Index i = 0; i < HW; ++i) {
    chan_gap = std::max(chan_gap, std::abs(K[i] - K[HW + i]));
  }
  CHECK(chan_gap > 1e-3);

  // swapping two input channels does not just swap the kernels: each channel
  // owns its slice of the subnetwork weights
  auto xs = x;
  for (Index i = 0; i < HW; ++i) std::swap(xs[i], xs[HW + i]);
  auto Ks = effective_kernel(xs, p);
  double diff = 0.0;
  for (Index i = 0; i < HW; ++i) {
    diff = std::max(diff, std::abs(Ks[i] - K[HW + i]));
  }
  CHECK(diff > 1e-3);
}

TEST_CASE("spatial-shared variant uses one kernel for all channels") {
  auto p = make_mixer_params<double>(MixerKind::SpatialSharedMask, 4, 8, 8, 8,
                                     15);
  auto x = testutil::random_real<double>(Shape{2, 4, 8, 8}, 35);
  auto K = variant_kernel(x, p);
  const Index HW = 64;
  for (Index n = 0; n < 2; ++n) {
    for (Index c = 1; c < 4; ++c) {
      for (Index i = 0; i < HW; ++i) {
        CHECK(K[(n * 4 + c) * HW + i] == K[n * 4 * HW + i]);
      }
    }
  }
  // while the full AFF kernel for the same input differs across channels
  auto Kfull = variant_kernel(
      x, make_mixer_params<double>(MixerKind::AffFft, 4, 8, 8, 8, 15));
  double gap = 0.0;
  for (Index i = 0; i < HW; ++i) {
    gap = std::max(gap, std::abs(Kfull[i] - Kfull[HW + i]));
  }
  CHECK(gap > 1e-3);
}

TEST_CASE("static mask variant: identity mask, zero init, size lock") {
  auto p = make_mixer_params<double>(MixerKind::StaticMask, 4, 8, 8, 8, 19);
  auto x = testutil::random_real<double>(Shape{1, 4, 8, 8}, 37);

  // zero-initialized mask silences the mixer
  CHECK(max_abs(variant_forward(x, p)) == 0.0);

  // all-ones mask is the identity filter
  auto pid = p;
  pid.static_re = Tensor<double>::full(Shape{4, 8, 8}, 1.0);
  CHECK(max_rel_err(variant_forward(x, pid), x) < 1e-12);

  // trained at 8x8, refuses any other resolution
  auto x16 = testutil::random_real<double>(Shape{1, 4, 16, 16}, 38);
  CHECK_THROWS_AS(variant_forward(x16, p), SizeError);
  auto xc = testutil::random_real<double>(Shape{1, 3, 8, 8}, 39);
  CHECK_THROWS_AS(variant_forward(xc, p), ShapeError);
}

TEST_CASE("no-FFT variant is the same subnetwork in the spatial domain") {
  auto p = make_mixer_params<double>(MixerKind::AffNoFft, 4, 8, 8, 8, 23);
  auto x = testutil::random_real<double>(Shape{2, 4, 8, 8}, 41);
  auto y = variant_forward(x, p);

  // expected: real(mask(x) hadamard x) = Re(mask) * x elementwise, with the
  // mask computed from x itself (real planes = x, imaginary planes = 0)
  Tape<double> t;
  Var xs = embed_complex_diff(t, t.input(x));
  Var m = aff_mask(t, xs, t.input(p.aff.w1), t.input(p.aff.b1),
                   t.input(p.aff.w2), t.input(p.aff.b2), p.aff.groups);
  auto expected = mul(real_part(t.cval(m)), x);
  CHECK(max_rel_err(y, expected) < 1e-13);
}

TEST_CASE("sum variant replaces the Hadamard product with addition") {
  auto p = make_mixer_params<double>(MixerKind::AffSum, 4, 8, 8, 8, 25);
  auto x = testutil::random_real<double>(Shape{1, 4, 8, 8}, 43);
  auto y = variant_forward(x, p);
  auto expected = real_part(ifft2(add(aff_mask_of(x, p.aff), fft2_real(x))));
  CHECK(max_rel_err(y, expected) < 1e-13);
}

TEST_CASE("conv3x3 variant is depthwise zero-padded convolution") {
  auto p = make_mixer_params<double>(MixerKind::Conv3x3, 3, 8, 8, 8, 27);
  auto x = testutil::random_real<double>(Shape{1, 3, 5, 5}, 45);
  CHECK(max_abs(variant_forward(x, p)) == 0.0);  // zero init

  p.conv_k = testutil::random_real<double>(Shape{3, 3, 3}, 46);
  p.conv_b = testutil::random_real<double>(Shape{3}, 47);
  auto y = variant_forward(x, p);
  auto expected = kern::dwconv3x3_fwd(x, p.conv_k, p.conv_b, Index{1});
  CHECK(max_rel_err(y, expected) == 0.0);
}

TEST_CASE("identity variant returns its input") {
  auto p = make_mixer_params<double>(MixerKind::Identity, 4, 8, 8, 8, 29);
  auto x = testutil::random_real<double>(Shape{2, 4, 8, 8}, 49);
  CHECK(max_rel_err(variant_forward(x, p), x) == 0.0);
}

TEST_CASE("subnetwork parameter count matches the closed form") {
  struct Case {
    Index c, g;
  } cases[] = {{64, 8}, {16, 4}, {8, 2}};
  for (auto [c, g] : cases) {
    auto p = make_aff_mixer_params<double>(c, g, 3);
    CHECK(p.param_count() == aff_mixer_param_count(c, g));
  }
  CHECK(aff_mixer_param_count(64, 8) == 4352);
  CHECK(aff_mixer_param_count(64, 8, false) == 4096);
  CHECK_THROWS_AS(make_aff_mixer_params<double>(2, 8, 1), ConfigError);
}

TEST_CASE("gradcheck: every mixer variant end to end") {
  auto x = testutil::random_real<double>(Shape{1, 2, 4, 4}, 51);
  auto seed_params = [](ParamStore<double>& ps) {
    auto p = make_aff_mixer_params<double>(2, 4, 53);
    ps.add("w1", p.w1);
    ps.add("b1", p.b1);
    ps.add("w2", p.w2);
    ps.add("b2", p.b2);
  };

  {
    ParamStore<double> ps;
    seed_params(ps);
    auto rep = gradcheck(
        [](auto& t, auto& ps, Var x) {
          return sum_all_diff(
              t, aff_mixer_fft(t, x, t.param("w1"), t.param("b1"),
                               t.param("w2"), t.param("b2"), 4));
        },
        ps, x, true, 1e-4, 1e-4);
    CHECK(rep.pass());
  }
  {
    ParamStore<double> ps;
    seed_params(ps);
    auto rep = gradcheck(
        [](auto& t, auto& ps, Var x) {
          return sum_all_diff(
              t, aff_mixer_no_fft(t, x, t.param("w1"), t.param("b1"),
                                  t.param("w2"), t.param("b2"), 4));
        },
        ps, x, true, 1e-4, 1e-4);
    CHECK(rep.pass());
  }
  {
    ParamStore<double> ps;
    seed_params(ps);
    auto rep = gradcheck(
        [](auto& t, auto& ps, Var x) {
          return sum_all_diff(
              t, aff_mixer_sum(t, x, t.param("w1"), t.param("b1"),
                               t.param("w2"), t.param("b2"), 4));
        },
        ps, x, true, 1e-4, 1e-4);
    CHECK(rep.pass());
  }
  {
    ParamStore<double> ps;
    seed_params(ps);
    auto rep = gradcheck(
        [](auto& t, auto& ps, Var x) {
          return sum_all_diff(
              t, spatial_shared_mixer(t, x, t.param("w1"), t.param("b1"),
                                      t.param("w2"), t.param("b2"), 4));
        },
        ps, x, true, 1e-4, 1e-4);
    CHECK(rep.pass());
  }
  {
    ParamStore<double> ps;
    ps.add("mre", testutil::random_real<double>(Shape{2, 4, 4}, 55));
    ps.add("mim", testutil::random_real<double>(Shape{2, 4, 4}, 56));
    auto rep = gradcheck(
        [](auto& t, auto& ps, Var x) {
          return sum_all_diff(
              t, static_mask_mixer(t, x, t.param("mre"), t.param("mim")));
        },
        ps, x, true, 1e-4, 1e-4);
    CHECK(rep.pass());
  }
}

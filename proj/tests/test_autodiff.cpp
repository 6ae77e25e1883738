#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <complex>

#include "aff/gradcheck.hpp"
#include "test_util.hpp"

using namespace aff;

namespace {

// Inputs for kinked activations keep a margin from the kinks so central
// differences at eps=1e-4 stay valid.
Tensor<double> away_from_kinks(Shape shape, std::uint64_t seed) {
  auto t = testutil::random_real<double>(std::move(shape), seed, -1.0, 1.0);
  for (Index i = 0; i < t.numel(); ++i) {
    if (std::abs(t[i]) < 0.05) t[i] += t[i] >= 0 ? 0.05 : -0.05;
  }
  return t;
}

double rdot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (Index i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

double re_cdot(const Tensor<std::complex<double>>& a,
               const Tensor<std::complex<double>>& b) {
  std::complex<double> s{0, 0};
  for (Index i = 0; i < a.numel(); ++i) s += std::conj(a[i]) * b[i];
  return s.real();
}

}  // namespace

TEST_CASE("relu forward and gradient, pinned example") {
  Tape<double> t;
  Var x = t.input(Tensor<double>(Shape{2}, {-1.0, 2.0}));
  Var y = relu(t, x);
  CHECK(t.val(y)[0] == 0.0);
  CHECK(t.val(y)[1] == 2.0);
  Var loss = sum_all_diff(t, y);
  t.backward(loss);
  auto g = t.grad(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
}

TEST_CASE("relu6 clamps and kills gradient outside (0,6)") {
  Tape<double> t;
  Var x = t.input(Tensor<double>(Shape{3}, {-2.0, 3.0, 7.0}));
  Var y = relu6(t, x);
  CHECK(t.val(y)[0] == 0.0);
  CHECK(t.val(y)[1] == 3.0);
  CHECK(t.val(y)[2] == 6.0);
  t.backward(sum_all_diff(t, y));
  auto g = t.grad(x);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  CHECK(g[2] == 0.0);
}

TEST_CASE("fan-out accumulates additively") {
  Tape<double> t;
  Var x = t.input(Tensor<double>(Shape{3}, {1.0, -2.0, 0.5}));
  Var y = add(t, x, x);
  t.backward(sum_all_diff(t, y));
  auto g = t.grad(x);
  for (Index i = 0; i < 3; ++i) CHECK(g[i] == 2.0);
}

TEST_CASE("backward validates the loss node") {
  Tape<double> t;
  Var x = t.input(testutil::random_real<double>(Shape{2, 2}, 4));
  CHECK_THROWS_AS(t.backward(x), RankError);  // non-scalar
  Var z = t.input(testutil::random_complex<double>(Shape{2, 2}, 4));
  CHECK_THROWS_AS(t.backward(z), TypeError);  // complex
  CHECK_THROWS_AS((void)t.val(z), TypeError);
  CHECK_THROWS_AS((void)t.cval(x), TypeError);
}

TEST_CASE("parameter gradients accumulate across backward calls") {
  ParamStore<double> ps;
  ps.add("w", Tensor<double>(Shape{2}, {1.0, 2.0}));
  Tape<double> t(&ps);
  Var w = t.param("w");
  Var loss = sum_all_diff(t, w);
  t.backward(loss);
  CHECK(ps.grad("w")[0] == 1.0);
  t.backward(loss);
  CHECK(ps.grad("w")[0] == 2.0);
  ps.zero_grads();
  CHECK(ps.grad("w")[0] == 0.0);
}

TEST_CASE("group_pointwise_linear forward matches a hand computation") {
  // One spatial position, groups=1: plain affine map.
  ParamStore<double> ps;
  Tape<double> t(&ps);
  Var x = t.input(Tensor<double>(Shape{1, 2, 1, 1}, {3.0, -1.0}));
  ps.add("w", Tensor<double>(Shape{2, 2}, {1.0, 2.0, -0.5, 4.0}));
  ps.add("b", Tensor<double>(Shape{2}, {0.25, -2.0}));
  Var y = group_pointwise_linear(t, x, t.param("w"), t.param("b"), 1);
  CHECK(t.val(y).at(0, 0, 0, 0) == doctest::Approx(1.0 * 3 + 2.0 * -1 + 0.25));
  CHECK(t.val(y).at(0, 1, 0, 0) == doctest::Approx(-0.5 * 3 + 4.0 * -1 - 2.0));
}

TEST_CASE("group_pointwise_linear keeps groups independent") {
  // With 2 groups, output channels of group 0 must ignore input channels of
  // group 1 entirely.
  ParamStore<double> ps;
  ps.add("w", testutil::random_real<double>(Shape{4, 2}, 31));
  ps.add("b", Tensor<double>(Shape{4}));
  auto x0 = testutil::random_real<double>(Shape{1, 4, 2, 2}, 32);
  auto x1 = x0;
  // perturb only group-1 input channels (2 and 3)
  for (Index c = 2; c < 4; ++c) {
    for (Index p = 0; p < 4; ++p) x1.at(Index{0}, c, p / 2, p % 2) += 1.0;
  }
  Tape<double> t(&ps);
  Var w = t.param("w"), b = t.param("b");
  Var ya = group_pointwise_linear(t, t.input(x0), w, b, 2);
  Var yb = group_pointwise_linear(t, t.input(x1), w, b, 2);
  for (Index c = 0; c < 2; ++c) {
    for (Index p = 0; p < 4; ++p) {
      CHECK(t.val(ya).at(Index{0}, c, p / 2, p % 2) ==
            doctest::Approx(t.val(yb).at(Index{0}, c, p / 2, p % 2)));
    }
  }
  CHECK_THROWS_AS(
      group_pointwise_linear(t, t.input(x0), w, b, 3),  // 3 does not divide 4
      ShapeError);
}

TEST_CASE("gradcheck: group_pointwise_linear and pointwise_conv") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ParamStore<double> ps;
    ps.add("w", testutil::random_real<double>(Shape{6, 2}, seed * 7 + 1));
    ps.add("b", testutil::random_real<double>(Shape{6}, seed * 7 + 2));
    auto x = testutil::random_real<double>(Shape{2, 4, 3, 2}, seed * 7 + 3);
    auto rep = gradcheck(
        [](auto& t, auto& ps, Var x) {
          Var y = group_pointwise_linear(t, x, t.param("w"), t.param("b"), 2);
          return sum_all_diff(t, relu(t, y));
        },
        ps, x, true, 1e-4, 1e-6);
    CHECK(rep.pass());
  }
  ParamStore<double> ps;
  ps.add("w", testutil::random_real<double>(Shape{3, 2}, 91));
  ps.add("b", testutil::random_real<double>(Shape{3}, 92));
  auto x = testutil::random_real<double>(Shape{1, 2, 2, 3}, 93);
  auto rep = gradcheck(
      [](auto& t, auto& ps, Var x) {
        return sum_all_diff(t,
                            pointwise_conv(t, x, t.param("w"), t.param("b")));
      },
      ps, x, true, 1e-4, 1e-6);
  CHECK(rep.pass());
}

TEST_CASE("depthwise_conv3x3: identity kernel is the identity at stride 1") {
  ParamStore<double> ps;
  Tensor<double> k(Shape{3, 3, 3});
  for (Index c = 0; c < 3; ++c) k.at(c, Index{1}, Index{1}) = 1.0;
  ps.add("k", k);
  ps.add("b", Tensor<double>(Shape{3}));
  auto x = testutil::random_real<double>(Shape{2, 3, 4, 5}, 8);
  Tape<double> t(&ps);
  Var y = depthwise_conv3x3(t, t.input(x), t.param("k"), t.param("b"), 1);
  CHECK(max_rel_err(t.val(y), x) == 0.0);
}

TEST_CASE("depthwise_conv3x3 stride-2 output size") {
  Tape<double> t;
  ParamStore<double> ps;
  ps.add("k", testutil::random_real<double>(Shape{2, 3, 3}, 5));
  ps.add("b", testutil::random_real<double>(Shape{2}, 6));
  Tape<double> tp(&ps);
  auto x = testutil::random_real<double>(Shape{1, 2, 8, 8}, 7);
  Var y = depthwise_conv3x3(tp, tp.input(x), tp.param("k"), tp.param("b"), 2);
  CHECK(tp.val(y).shape() == Shape{1, 2, 4, 4});
  CHECK_THROWS_AS(
      depthwise_conv3x3(tp, tp.input(x), tp.param("k"), tp.param("b"), 3),
      ShapeError);
}

TEST_CASE("gradcheck: depthwise_conv3x3 at both strides") {
  for (Index stride : {1, 2}) {
    for (std::uint64_t seed : {11u, 12u, 13u}) {
      ParamStore<double> ps;
      ps.add("k", testutil::random_real<double>(Shape{3, 3, 3}, seed + 1));
      ps.add("b", testutil::random_real<double>(Shape{3}, seed + 2));
      auto x = testutil::random_real<double>(Shape{2, 3, 5, 4}, seed + 3);
      auto rep = gradcheck(
          [stride](auto& t, auto& ps, Var x) {
            return sum_all_diff(t, depthwise_conv3x3(t, x, t.param("k"),
                                                     t.param("b"), stride));
          },
          ps, x, true, 1e-4, 1e-6);
      CHECK(rep.pass());
    }
  }
}

TEST_CASE("conv3x3 forward spot value and gradcheck") {
  {
    // 1x1 input, all mass through the kernel center.
    ParamStore<double> ps;
    Tensor<double> w(Shape{1, 1, 3, 3});
    w.at(Index{0}, Index{0}, Index{1}, Index{1}) = 2.0;
    w.at(Index{0}, Index{0}, Index{0}, Index{0}) = 5.0;  // falls on padding
    ps.add("w", w);
    ps.add("b", Tensor<double>(Shape{1}, {0.5}));
    Tape<double> t(&ps);
    Var y = conv3x3(t, t.input(Tensor<double>(Shape{1, 1, 1, 1}, {3.0})),
                    t.param("w"), t.param("b"), 1);
    CHECK(t.val(y)[0] == doctest::Approx(6.5));
  }
  for (Index stride : {1, 2}) {
    ParamStore<double> ps;
    ps.add("w", testutil::random_real<double>(Shape{2, 3, 3, 3}, 40 + stride));
    ps.add("b", testutil::random_real<double>(Shape{2}, 41));
    auto x = testutil::random_real<double>(Shape{2, 3, 4, 4}, 42);
    auto rep = gradcheck(
        [stride](auto& t, auto& ps, Var x) {
          return sum_all_diff(
              t, conv3x3(t, x, t.param("w"), t.param("b"), stride));
        },
        ps, x, true, 1e-4, 1e-6);
    CHECK(rep.pass());
  }
}

TEST_CASE("layer_norm of constant input yields beta") {
  ParamStore<double> ps;
  ps.add("gamma", Tensor<double>::full(Shape{4}, 1.5));
  ps.add("beta", Tensor<double>(Shape{4}, {0.1, 0.2, 0.3, 0.4}));
  Tape<double> t(&ps);
  auto x = Tensor<double>::full(Shape{1, 4, 2, 2}, 3.25);
  Var y = layer_norm(t, t.input(x), t.param("gamma"), t.param("beta"));
  for (Index c = 0; c < 4; ++c) {
    for (Index p = 0; p < 4; ++p) {
      CHECK(t.val(y).at(Index{0}, c, p / 2, p % 2) ==
            doctest::Approx(0.1 * (c + 1)).epsilon(1e-9));
    }
  }
}

TEST_CASE("layer_norm normalizes per position over channels") {
  auto x = testutil::random_real<double>(Shape{2, 5, 3, 3}, 50);
  ParamStore<double> ps;
  ps.add("gamma", Tensor<double>::full(Shape{5}, 1.0));
  ps.add("beta", Tensor<double>(Shape{5}));
  Tape<double> t(&ps);
  Var y = layer_norm(t, t.input(x), t.param("gamma"), t.param("beta"));
  for (Index n = 0; n < 2; ++n) {
    for (Index h = 0; h < 3; ++h) {
      for (Index w = 0; w < 3; ++w) {
        double m = 0.0, v = 0.0;
        for (Index c = 0; c < 5; ++c) m += t.val(y).at(n, c, h, w);
        m /= 5;
        for (Index c = 0; c < 5; ++c) {
          double d = t.val(y).at(n, c, h, w) - m;
          v += d * d;
        }
        CHECK(m == doctest::Approx(0.0).epsilon(1e-10));
        CHECK(v / 5 == doctest::Approx(1.0).epsilon(1e-3));
      }
    }
  }
}

TEST_CASE("gradcheck: layer_norm") {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    ParamStore<double> ps;
    ps.add("gamma", testutil::random_real<double>(Shape{4}, seed, 0.5, 1.5));
    ps.add("beta", testutil::random_real<double>(Shape{4}, seed + 1));
    auto x = testutil::random_real<double>(Shape{2, 4, 2, 3}, seed + 2);
    auto rep = gradcheck(
        [](auto& t, auto& ps, Var x) {
          return sum_all_diff(
              t, relu(t, layer_norm(t, x, t.param("gamma"), t.param("beta"))));
        },
        ps, x, true, 1e-4, 1e-6);
    CHECK(rep.pass());
  }
}

TEST_CASE("global_avg_pool forward and gradcheck") {
  Tape<double> t;
  auto x = testutil::random_real<double>(Shape{2, 3, 2, 2}, 60);
  Var y = global_avg_pool(t, t.input(x));
  CHECK(t.val(y).shape() == Shape{2, 3});
  double acc = 0.0;
  for (Index p = 0; p < 4; ++p) acc += x.at(Index{1}, Index{2}, p / 2, p % 2);
  CHECK(t.val(y).at(1, 2) == doctest::Approx(acc / 4));

  ParamStore<double> none;
  auto rep = gradcheck(
      [](auto& t, auto&, Var x) {
        return sum_all_diff(t, global_avg_pool(t, x));
      },
      none, x, true, 1e-4, 1e-6);
  CHECK(rep.pass());
}

TEST_CASE("linear head forward and gradcheck") {
  ParamStore<double> ps;
  ps.add("w", Tensor<double>(Shape{2, 3}, {1, 0, -1, 2, 1, 0.5}));
  ps.add("b", Tensor<double>(Shape{2}, {0.5, -0.5}));
  Tape<double> t(&ps);
  Var y = linear(t, t.input(Tensor<double>(Shape{1, 3}, {2, 3, 4})),
                 t.param("w"), t.param("b"));
  CHECK(t.val(y).at(0, 0) == doctest::Approx(2 - 4 + 0.5));
  CHECK(t.val(y).at(0, 1) == doctest::Approx(4 + 3 + 2 - 0.5));

  auto x = testutil::random_real<double>(Shape{3, 4}, 70);
  ParamStore<double> ps2;
  ps2.add("w", testutil::random_real<double>(Shape{5, 4}, 71));
  ps2.add("b", testutil::random_real<double>(Shape{5}, 72));
  auto rep = gradcheck(
      [](auto& t, auto& ps, Var x) {
        return sum_all_diff(t, linear(t, x, t.param("w"), t.param("b")));
      },
      ps2, x, true, 1e-4, 1e-6);
  CHECK(rep.pass());
}

TEST_CASE("softmax cross entropy pinned values") {
  Tape<double> t;
  Var logits = t.input(Tensor<double>(Shape{1, 2}, {0.0, 0.0}));
  Var loss = softmax_cross_entropy(t, logits, {0}, 0.0);
  CHECK(t.val(loss)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // With smoothing a and K classes, uniform logits still give log K.
  Var loss2 = softmax_cross_entropy(
      t, t.input(Tensor<double>(Shape{1, 4}, {0, 0, 0, 0})), {2}, 0.1);
  CHECK(t.val(loss2)[0] == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  // Hand value: logits [1,0], label 0, smoothing 0.2.
  // p = [e/(e+1), 1/(e+1)]; q = [0.9, 0.1]
  Var loss3 = softmax_cross_entropy(
      t, t.input(Tensor<double>(Shape{1, 2}, {1.0, 0.0})), {0}, 0.2);
  const double z = std::exp(1.0) + 1.0;
  const double expect = -(0.9 * (1.0 - std::log(z)) + 0.1 * (0.0 - std::log(z)));
  CHECK(t.val(loss3)[0] == doctest::Approx(expect).epsilon(1e-12));

  CHECK_THROWS_AS(softmax_cross_entropy(
                      t, t.input(Tensor<double>(Shape{1, 2}, {0.0, 0.0})), {2},
                      0.0),
                  SizeError);
  CHECK_THROWS_AS(softmax_cross_entropy(
                      t, t.input(Tensor<double>(Shape{1, 2}, {0.0, 0.0})), {0},
                      1.5),
                  ConfigError);
}

TEST_CASE("gradcheck: softmax cross entropy with and without smoothing") {
  for (double smoothing : {0.0, 0.1}) {
    ParamStore<double> ps;
    ps.add("w", testutil::random_real<double>(Shape{4, 3}, 81));
    ps.add("b", testutil::random_real<double>(Shape{4}, 82));
    auto x = testutil::random_real<double>(Shape{3, 3}, 83);
    auto rep = gradcheck(
        [smoothing](auto& t, auto& ps, Var x) {
          Var logits = linear(t, x, t.param("w"), t.param("b"));
          return softmax_cross_entropy(t, logits, {0, 2, 3}, smoothing);
        },
        ps, x, true, 1e-4, 1e-6);
    CHECK(rep.pass());
  }
}

TEST_CASE("gradcheck: fft2_diff / ifft2_diff through plane plumbing") {
  // Input channels [0,1] become the real/imag planes of one complex plane,
  // so finite differences probe both Wirtinger components.
  for (std::uint64_t seed : {31u, 32u, 33u}) {
    ParamStore<double> none;
    auto x = testutil::random_real<double>(Shape{1, 2, 4, 4}, seed);
    auto rep = gradcheck(
        [](auto& t, auto&, Var x) {
          Var z = planes_to_complex(t, x);
          Var F = fft2_diff(t, z);
          return sum_all_diff(t, real_part_diff(t, F));
        },
        none, x, true, 1e-4, 1e-6);
    CHECK(rep.pass());

    auto rep2 = gradcheck(
        [](auto& t, auto&, Var x) {
          Var z = planes_to_complex(t, x);
          Var F = ifft2_diff(t, z);
          Var planes = complex_to_planes(t, F);
          return sum_all_diff(t, planes);  // real+imag both contribute
        },
        none, x, true, 1e-4, 1e-6);
    CHECK(rep2.pass());
  }
}

TEST_CASE("gradcheck: round trip ifft2(fft2(embed(x)))") {
  ParamStore<double> none;
  auto x = testutil::random_real<double>(Shape{1, 2, 8, 8}, 35);
  auto rep = gradcheck(
      [](auto& t, auto&, Var x) {
        Var z = embed_complex_diff(t, x);
        Var y = real_part_diff(t, ifft2_diff(t, fft2_diff(t, z)));
        return sum_all_diff(t, relu(t, y));
      },
      none, x, true, 1e-4, 1e-6);
  CHECK(rep.pass());
}

TEST_CASE("gradcheck: complex hadamard and complex add") {
  for (std::uint64_t seed : {41u, 42u, 43u}) {
    ParamStore<double> ps;
    ps.add("mre", testutil::random_real<double>(Shape{1, 1, 3, 3}, seed + 1));
    ps.add("mim", testutil::random_real<double>(Shape{1, 1, 3, 3}, seed + 2));
    auto x = testutil::random_real<double>(Shape{1, 2, 3, 3}, seed + 3);
    auto rep = gradcheck(
        [](auto& t, auto& ps, Var x) {
          Var a = planes_to_complex(t, x);
          Var b = make_complex_diff(t, t.param("mre"), t.param("mim"));
          Var y = complex_hadamard(t, a, b);
          return sum_all_diff(t, complex_to_planes(t, y));
        },
        ps, x, true, 1e-4, 1e-6);
    CHECK(rep.pass());
    auto rep2 = gradcheck(
        [](auto& t, auto& ps, Var x) {
          Var a = planes_to_complex(t, x);
          Var b = make_complex_diff(t, t.param("mre"), t.param("mim"));
          Var y = complex_add(t, a, b);
          return sum_all_diff(t, real_part_diff(t, y));
        },
        ps, x, true, 1e-4, 1e-6);
    CHECK(rep2.pass());
  }
}

TEST_CASE("gradcheck: channel mean, repeat_channel, repeat_batch") {
  ParamStore<double> ps;
  ps.add("mre", testutil::random_real<double>(Shape{2, 3, 3}, 61));
  ps.add("mim", testutil::random_real<double>(Shape{2, 3, 3}, 62));
  auto x = testutil::random_real<double>(Shape{2, 4, 3, 3}, 63);
  auto rep = gradcheck(
      [](auto& t, auto& ps, Var x) {
        Var z = planes_to_complex(t, x);  // [2,2,3,3]
        Var m = complex_channel_mean(t, z);
        Var mb = repeat_channel(t, m, 2);
        Var mask = make_complex_diff(t, t.param("mre"), t.param("mim"));
        Var maskb = repeat_batch(t, mask, 2);  // [2,2,3,3]
        Var y = complex_hadamard(t, mb, maskb);
        return sum_all_diff(t, complex_to_planes(t, y));
      },
      ps, x, true, 1e-4, 1e-6);
  CHECK(rep.pass());
}

TEST_CASE("complex plane layout round trip") {
  auto z = testutil::random_complex<double>(Shape{2, 3, 4, 4}, 90);
  Tape<double> t;
  Var zv = t.input(z);
  Var planes = complex_to_planes(t, zv);
  // channels [0,C) are real planes, [C,2C) imaginary planes
  const auto& p = t.val(planes);
  CHECK(p.shape() == Shape{2, 6, 4, 4});
  CHECK(p.at(Index{1}, Index{2}, Index{3}, Index{3}) ==
        z.at(Index{1}, Index{2}, Index{3}, Index{3}).real());
  CHECK(p.at(Index{1}, Index{5}, Index{3}, Index{3}) ==
        z.at(Index{1}, Index{2}, Index{3}, Index{3}).imag());
  Var back = planes_to_complex(t, planes);
  CHECK(max_rel_err(t.cval(back), z) == 0.0);
}

TEST_CASE("adjoint identities for the linear kernels") {
  // <L x, y> == <x, L* y> with L* taken from the backward kernel.
  const double tol = 1e-12;

  {  // fft2: adjoint of forward is H*W times inverse
    auto x = testutil::random_complex<double>(Shape{2, 8, 8}, 101);
    auto y = testutil::random_complex<double>(Shape{2, 8, 8}, 102);
    auto Fx = fft2(x);
    auto FHy = scale(ifft2(y), std::complex<double>(64.0, 0.0));
    CHECK(std::abs(re_cdot(Fx, y) - re_cdot(x, FHy)) /
              std::max(1.0, std::abs(re_cdot(Fx, y))) <
          tol);
  }
  {  // group linear (bias-free part)
    auto x = testutil::random_real<double>(Shape{2, 4, 3, 3}, 103);
    auto w = testutil::random_real<double>(Shape{6, 2}, 104);
    auto zerob = Tensor<double>(Shape{6});
    auto y = testutil::random_real<double>(Shape{2, 6, 3, 3}, 105);
    auto Lx = kern::group_linear_fwd(x, w, zerob, 2);
    Tensor<double> dx(x.shape()), dw(w.shape()), db(zerob.shape());
    kern::group_linear_bwd(x, w, Index{2}, y, dx, dw, db);
    CHECK(std::abs(rdot(Lx, y) - rdot(x, dx)) /
              std::max(1.0, std::abs(rdot(Lx, y))) <
          tol);
  }
  {  // depthwise conv, stride 2
    auto x = testutil::random_real<double>(Shape{1, 3, 5, 7}, 106);
    auto k = testutil::random_real<double>(Shape{3, 3, 3}, 107);
    auto zerob = Tensor<double>(Shape{3});
    auto Lx = kern::dwconv3x3_fwd(x, k, zerob, 2);
    auto y = testutil::random_real<double>(Lx.shape(), 108);
    Tensor<double> dx(x.shape()), dk(k.shape()), db(zerob.shape());
    kern::dwconv3x3_bwd(x, k, Index{2}, y, dx, dk, db);
    CHECK(std::abs(rdot(Lx, y) - rdot(x, dx)) /
              std::max(1.0, std::abs(rdot(Lx, y))) <
          tol);
  }
  {  // dense conv3x3, stride 2
    auto x = testutil::random_real<double>(Shape{1, 2, 4, 6}, 109);
    auto w = testutil::random_real<double>(Shape{3, 2, 3, 3}, 110);
    auto zerob = Tensor<double>(Shape{3});
    auto Lx = kern::conv3x3_fwd(x, w, zerob, 2);
    auto y = testutil::random_real<double>(Lx.shape(), 111);
    Tensor<double> dx(x.shape()), dw(w.shape()), db(zerob.shape());
    kern::conv3x3_bwd(x, w, Index{2}, y, dx, dw, db);
    CHECK(std::abs(rdot(Lx, y) - rdot(x, dx)) /
              std::max(1.0, std::abs(rdot(Lx, y))) <
          tol);
  }
  {  // global average pool
    auto x = testutil::random_real<double>(Shape{2, 3, 4, 4}, 112);
    auto Lx = kern::gap_fwd(x);
    auto y = testutil::random_real<double>(Lx.shape(), 113);
    Tensor<double> dx(x.shape());
    kern::gap_bwd(Index{4}, Index{4}, y, dx);
    CHECK(std::abs(rdot(Lx, y) - rdot(x, dx)) /
              std::max(1.0, std::abs(rdot(Lx, y))) <
          tol);
  }
}

TEST_CASE("gradient linearity in the loss") {
  ParamStore<double> ps;
  ps.add("w", testutil::random_real<double>(Shape{3, 2}, 120));
  ps.add("b", testutil::random_real<double>(Shape{3}, 121));
  auto x = testutil::random_real<double>(Shape{2, 2, 2, 2}, 122);
  const double alpha = 0.7, beta = -1.3;

  auto grads_for = [&](int which) {
    ParamStore<double> local = ps;
    local.zero_grads();
    Tape<double> t(&local);
    Var xin = t.input(x);
    Var y = group_pointwise_linear(t, xin, t.param("w"), t.param("b"), 1);
    Var l1 = sum_all_diff(t, relu(t, y));
    Var l2 = sum_all_diff(t, y);
    Var loss = which == 0   ? l1
               : which == 1 ? l2
                            : add(t, scale_by(t, l1, alpha),
                                  scale_by(t, l2, beta));
    t.backward(loss);
    return std::pair{local.grad("w"), local.grad("b")};
  };
  auto [gw1, gb1] = grads_for(0);
  auto [gw2, gb2] = grads_for(1);
  auto [gwc, gbc] = grads_for(2);
  auto combo_w = add(scale(gw1, alpha), scale(gw2, beta));
  auto combo_b = add(scale(gb1, alpha), scale(gb2, beta));
  CHECK(max_rel_err(gwc, combo_w) < 1e-14);
  CHECK(max_rel_err(gbc, combo_b) < 1e-14);
}

TEST_CASE("corrupted backward rule is localized to its parameter") {
  ParamStore<double> ps;
  ps.add("good", testutil::random_real<double>(Shape{3}, 130));
  ps.add("wrong", testutil::random_real<double>(Shape{3}, 131));
  auto x = testutil::random_real<double>(Shape{3}, 132);
  auto rep = gradcheck(
      [](auto& t, auto& ps, Var x) {
        using TapeT = std::decay_t<decltype(t)>;
        Var g = t.param("good");
        Var w = t.param("wrong");
        // custom node: forward 2*w, backward deliberately claims 3
        auto two_w = t.val(w);
        for (Index i = 0; i < two_w.numel(); ++i) two_w[i] *= 2;
        Var bad = t.record_real(std::move(two_w), {w.id},
                                [w](TapeT& t, int self) {
                                  const auto& gy = t.rgrad_slot(self);
                                  auto& dw = t.rgrad_slot(w.id);
                                  for (Index i = 0; i < gy.numel(); ++i) {
                                    dw[i] += 3 * gy[i];
                                  }
                                });
        return sum_all_diff(t, add(t, add(t, g, bad), x));
      },
      ps, x, true, 1e-4, 1e-6);
  CHECK_FALSE(rep.pass());
  CHECK(rep.worst().name == "wrong");
  CHECK(rep.worst().max_err > 0.3);
  // the untouched parameter and the input still check out
  for (const auto& e : rep.entries) {
    if (e.name != "wrong") CHECK(e.max_err <= 1e-6);
  }
}

TEST_CASE("non-deterministic fragment raises DeterminismError") {
  ParamStore<double> ps;
  ps.add("w", testutil::random_real<double>(Shape{2}, 140));
  auto x = testutil::random_real<double>(Shape{2}, 141);
  int calls = 0;
  CHECK_THROWS_AS(
      gradcheck(
          [&calls](auto& t, auto& ps, Var x) {
            using S = typename std::decay_t<decltype(t)>::Real::value_type;
            Var w = t.param("w");
            Var y = scale_by(t, w, static_cast<S>(1.0 + 0.001 * calls++));
            return sum_all_diff(t, add(t, y, x));
          },
          ps, x, false, 1e-4, 1e-6),
      DeterminismError);
}

TEST_CASE("f32 analytic gradients against f64 finite differences") {
  ParamStore<double> ps;
  ps.add("w", testutil::random_real<double>(Shape{4, 2}, 150));
  ps.add("b", testutil::random_real<double>(Shape{4}, 151));
  auto x = away_from_kinks(Shape{1, 4, 3, 3}, 152);
  auto rep = gradcheck(
      [](auto& t, auto& ps, Var x) {
        Var y = group_pointwise_linear(t, x, t.param("w"), t.param("b"), 2);
        return sum_all_diff(t, relu(t, y));
      },
      ps, x, true, 1e-4, 1e-4, Precision::f32);
  CHECK(rep.pass());
}

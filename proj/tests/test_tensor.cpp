#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>

#include "aff/tensor.hpp"
#include "test_util.hpp"

using namespace aff;

TEST_CASE("shape validation and arithmetic") {
  Shape s{2, 3, 4};
  CHECK(s.rank() == 3);
  CHECK(s.numel() == 24);
  CHECK(s.dim(2) == 4);
  CHECK(s == Shape{2, 3, 4});
  CHECK(s != Shape{2, 3});
  CHECK(Shape{}.numel() == 1);  // rank-0 scalar
  CHECK_THROWS_AS(Shape{0}, ShapeError);
  CHECK_THROWS_AS(Shape({2, -1}), ShapeError);
  CHECK_THROWS_AS(s.dim(3), AxisError);
}

TEST_CASE("tensor construction and row-major indexing") {
  Tensor<double> t(Shape{2, 3});
  CHECK(t.numel() == 6);
  t.at(1, 2) = 7.0;
  CHECK(t[5] == 7.0);
  t.at(0, 1) = 3.0;
  CHECK(t[1] == 3.0);
  CHECK_THROWS_AS(t.at(2, 0), ShapeError);
  CHECK_THROWS_AS(t.at(0), RankError);
  CHECK_THROWS_AS(Tensor<double>(Shape{2}, {1.0, 2.0, 3.0}), ShapeError);

  auto f = Tensor<float>::full(Shape{3}, 2.5f);
  CHECK(f[2] == 2.5f);
  auto z = Tensor<double>::zeros(Shape{4});
  CHECK(sum_all(z) == 0.0);
}

TEST_CASE("elementwise ops") {
  Tensor<double> a(Shape{2}, {1.0, 2.0});
  Tensor<double> b(Shape{2}, {3.0, 4.0});
  auto s = add(a, b);
  CHECK(s[0] == 4.0);
  CHECK(s[1] == 6.0);
  auto d = sub(s, b);
  CHECK(max_rel_err(d, a) == 0.0);
  auto m = mul(a, b);
  CHECK(m[0] == 3.0);
  CHECK(m[1] == 8.0);
  auto sc = scale(a, 2.0);
  CHECK(sc[1] == 4.0);
  Tensor<double> wrong(Shape{3});
  CHECK_THROWS_AS(add(a, wrong), ShapeError);
  CHECK_THROWS_AS(mul(a, wrong), ShapeError);
}

TEST_CASE("elementwise ops reject non-finite results") {
  const double big = std::numeric_limits<double>::max();
  Tensor<double> a(Shape{1}, {big});
  CHECK_THROWS_AS(add(a, a), NumericError);
  CHECK_THROWS_AS(mul(a, a), NumericError);
  CHECK_THROWS_AS(scale(a, 2.0), NumericError);
}

TEST_CASE("reduce_sum semantics") {
  auto ones = Tensor<double>::full(Shape{4, 4}, 1.0);
  auto total = reduce_sum(ones, {0, 1});
  CHECK(total.rank() == 0);
  CHECK(total[0] == 16.0);

  // no-op on empty axis list
  auto same = reduce_sum(ones, {});
  CHECK(same.shape() == ones.shape());

  auto x = testutil::random_real<double>(Shape{2, 3, 4}, 11);
  auto r = reduce_sum(x, {1});
  CHECK(r.shape() == Shape{2, 4});
  // independent accumulation oracle
  for (Index b = 0; b < 2; ++b) {
    for (Index k = 0; k < 4; ++k) {
      double acc = 0.0;
      for (Index j = 0; j < 3; ++j) acc += x.at(b, j, k);
      CHECK(r.at(b, k) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
  CHECK(reduce_sum(x, std::vector<Index>{0, 1, 2})[0] ==
        doctest::Approx(sum_all(x)).epsilon(1e-12));

  CHECK_THROWS_AS(reduce_sum(x, {3}), AxisError);
  CHECK_THROWS_AS(reduce_sum(x, {-1}), AxisError);
  CHECK_THROWS_AS(reduce_sum(x, {1, 1}), AxisError);
}

TEST_CASE("real/imag/make_complex round trip") {
  auto re = testutil::random_real<double>(Shape{3, 3}, 5);
  auto im = testutil::random_real<double>(Shape{3, 3}, 6);
  auto z = make_complex(re, im);
  CHECK(max_rel_err(real_part(z), re) == 0.0);
  CHECK(max_rel_err(imag_part(z), im) == 0.0);
  auto z0 = make_complex(re);
  CHECK(max_abs(imag_part(z0)) == 0.0);
  Tensor<double> wrong(Shape{2, 2});
  CHECK_THROWS_AS(make_complex(re, wrong), ShapeError);
}

TEST_CASE("complex elementwise ops") {
  using C = std::complex<double>;
  Tensor<C> a(Shape{2}, {C{1, 2}, C{0, 1}});
  Tensor<C> b(Shape{2}, {C{3, -1}, C{2, 2}});
  auto m = mul(a, b);
  CHECK(m[0] == C{5, 5});    // (1+2i)(3-i) = 5+5i
  CHECK(m[1] == C{-2, 2});   // i(2+2i) = -2+2i
  auto s = add(a, b);
  CHECK(s[0] == C{4, 1});
}

TEST_CASE("max_rel_err is scale-aware") {
  Tensor<double> a(Shape{2}, {1000.0, 0.0});
  Tensor<double> b(Shape{2}, {1000.0, 1e-9});
  CHECK(max_rel_err(a, b) == doctest::Approx(1e-12).epsilon(1e-3));
  auto zero = Tensor<double>::zeros(Shape{2});
  CHECK(max_rel_err(zero, zero) == 0.0);
}

TEST_CASE("cast between precisions") {
  auto x = testutil::random_real<double>(Shape{5}, 3);
  auto f = x.cast<float>();
  auto back = f.cast<double>();
  CHECK(max_rel_err(x, back) < 1e-7);
}

TEST_CASE("random-input algebraic properties") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto a = testutil::random_real<double>(Shape{3, 5}, seed);
    auto b = testutil::random_real<double>(Shape{3, 5}, seed + 100);
    CHECK(max_rel_err(add(a, b), add(b, a)) == 0.0);
    CHECK(max_rel_err(sub(add(a, b), b), a) < 1e-15);
    auto ab = mul(a, b);
    CHECK(max_rel_err(ab, mul(b, a)) == 0.0);
  }
}

#pragma once

#include <cmath>
#include <complex>
#include <cstdio>
#include <string>
#include <vector>

#include "aff/fft.hpp"
#include "aff/gradcheck.hpp"
#include "aff/mixers.hpp"
#include "aff/network.hpp"

namespace aff {

// One checked property. `at_most` properties pass when the observed error
// stays under the bound; witness properties flip the comparison, the gap
// has to be at least the bound to count as demonstrated.
struct PropertyResult {
  std::string suite;
  std::string name;
  bool pass = false;
  double observed = 0.0;
  double bound = 0.0;
  bool at_most = true;
  std::string note;
};

inline bool all_pass(const std::vector<PropertyResult>& rs) {
  for (const auto& r : rs) {
    if (!r.pass) return false;
  }
  return true;
}

inline std::string property_line(const PropertyResult& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "[%s] %s/%s  observed=%.3e (%s %.0e)",
                r.pass ? "PASS" : "FAIL", r.suite.c_str(), r.name.c_str(),
                r.observed, r.at_most ? "tol" : "min", r.bound);
  std::string out = buf;
  if (!r.note.empty()) out += "  " + r.note;
  return out;
}

namespace verifydetail {

template <typename S>
Tensor<S> rand_real(Shape shape, Rng& rng) {
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<S>(rng.uniform(-1.0, 1.0));
  }
  return t;
}

template <typename S>
Tensor<std::complex<S>> rand_complex(Shape shape, Rng& rng) {
  Tensor<std::complex<S>> t(std::move(shape));
  for (Index i = 0; i < t.numel(); ++i) {
    t[i] = {static_cast<S>(rng.uniform(-1.0, 1.0)),
            static_cast<S>(rng.uniform(-1.0, 1.0))};
  }
  return t;
}

inline PropertyResult bounded(const std::string& suite, const std::string& name,
                              double observed, double bound,
                              std::string note = "") {
  return PropertyResult{suite, name,     observed <= bound,
                        observed, bound, true,
                        std::move(note)};
}

inline PropertyResult witness(const std::string& suite, const std::string& name,
                              double observed, double bound,
                              std::string note = "") {
  return PropertyResult{suite, name,     observed >= bound,
                        observed, bound, false,
                        std::move(note)};
}

// ----------------------------------------------------------------- fft

template <typename S>
void fft_suite(std::vector<PropertyResult>& out, double tol) {
  const std::vector<Index> sizes = {2, 4, 8, 16, 32};
  double err_fwd = 0.0, err_inv = 0.0, err_round = 0.0, err_parseval = 0.0;
  Rng rng = substream(7, "verify_fft");
  for (Index h : sizes) {
    for (Index w : sizes) {
      const auto x = rand_complex<S>(Shape{1, 1, h, w}, rng);
      const auto fwd = fft2(x);
      err_fwd = std::max(
          err_fwd, max_rel_err(fwd, dft2_naive(x, FftDirection::forward)));
      err_inv = std::max(
          err_inv, max_rel_err(ifft2(x), dft2_naive(x, FftDirection::inverse)));
      err_round = std::max(err_round, max_rel_err(ifft2(fwd), x));

      double space = 0.0, freq = 0.0;
      for (Index i = 0; i < x.numel(); ++i) {
        space += static_cast<double>(std::norm(x[i]));
        freq += static_cast<double>(std::norm(fwd[i]));
      }
      freq /= static_cast<double>(h * w);
      err_parseval =
          std::max(err_parseval, std::abs(space - freq) / std::abs(space));
    }
  }
  const std::string sz = "sizes 2..32 both axes";
  out.push_back(bounded("fft", "matches_naive_dft_forward", err_fwd, tol, sz));
  out.push_back(bounded("fft", "matches_naive_dft_inverse", err_inv, tol, sz));
  out.push_back(bounded("fft", "inverse_round_trip", err_round, tol, sz));
  out.push_back(bounded("fft", "parseval_energy", err_parseval, tol, sz));
}

// ----------------------------------------------------------- gradcheck

// Worst entry of a gradcheck run, folded into one property row.
inline PropertyResult grad_row(const std::string& name,
                               const GradcheckReport& rep, double tol) {
  PropertyResult r = bounded("gradcheck", name, rep.worst().max_err, tol);
  r.pass = rep.pass() && r.pass;
  r.note = "worst: " + rep.worst().name;
  return r;
}

inline void gradcheck_suite(std::vector<PropertyResult>& out, double tol_op,
                            double tol_block, Precision analytic) {
  auto rr = [](Shape s, std::uint64_t seed) {
    Rng rng = substream(seed, "verify_grad");
    return rand_real<double>(std::move(s), rng);
  };

  {
    ParamStore<double> ps;
    ps.add("w", rr(Shape{6, 2}, 1));
    ps.add("b", rr(Shape{6}, 2));
    auto rep = gradcheck(
        [](auto& t, auto&, Var x) {
          return sum_all_diff(
              t, relu(t, group_pointwise_linear(t, x, t.param("w"),
                                                t.param("b"), 2)));
        },
        ps, rr(Shape{2, 4, 3, 2}, 3), true, 1e-4, tol_op, analytic);
    out.push_back(grad_row("group_pointwise_linear_relu", rep, tol_op));
  }
  {
    ParamStore<double> ps;
    ps.add("w", rr(Shape{3, 2}, 4));
    ps.add("b", rr(Shape{3}, 5));
    auto rep = gradcheck(
        [](auto& t, auto&, Var x) {
          return sum_all_diff(
              t, pointwise_conv(t, x, t.param("w"), t.param("b")));
        },
        ps, rr(Shape{1, 2, 2, 3}, 6), true, 1e-4, tol_op, analytic);
    out.push_back(grad_row("pointwise_conv", rep, tol_op));
  }
  for (Index stride : {1, 2}) {
    ParamStore<double> ps;
    ps.add("k", rr(Shape{3, 3, 3}, 7 + stride));
    ps.add("b", rr(Shape{3}, 9));
    auto rep = gradcheck(
        [stride](auto& t, auto&, Var x) {
          return sum_all_diff(t, depthwise_conv3x3(t, x, t.param("k"),
                                                   t.param("b"), stride));
        },
        ps, rr(Shape{1, 3, 4, 4}, 10), true, 1e-4, tol_op, analytic);
    out.push_back(grad_row("depthwise_conv3x3_s" + std::to_string(stride), rep,
                           tol_op));
  }
  {
    ParamStore<double> ps;
    ps.add("w", rr(Shape{2, 3, 3, 3}, 11));
    ps.add("b", rr(Shape{2}, 12));
    auto rep = gradcheck(
        [](auto& t, auto&, Var x) {
          return sum_all_diff(t,
                              conv3x3(t, x, t.param("w"), t.param("b"), 2));
        },
        ps, rr(Shape{1, 3, 4, 4}, 13), true, 1e-4, tol_op, analytic);
    out.push_back(grad_row("conv3x3_stride2", rep, tol_op));
  }
  {
    ParamStore<double> ps;
    ps.add("g", rr(Shape{3}, 14));
    ps.add("b", rr(Shape{3}, 15));
    auto rep = gradcheck(
        [](auto& t, auto&, Var x) {
          return sum_all_diff(t,
                              layer_norm(t, x, t.param("g"), t.param("b")));
        },
        ps, rr(Shape{2, 3, 2, 2}, 16), true, 1e-4, tol_op, analytic);
    out.push_back(grad_row("layer_norm", rep, tol_op));
  }
  {
    ParamStore<double> ps;
    ps.add("w", rr(Shape{4, 3}, 17));
    ps.add("b", rr(Shape{4}, 18));
    auto rep = gradcheck(
        [](auto& t, auto&, Var x) {
          Var pooled = global_avg_pool(t, x);
          Var logits = linear(t, pooled, t.param("w"), t.param("b"));
          return softmax_cross_entropy(t, logits, {1, 3}, 0.1);
        },
        ps, rr(Shape{2, 3, 4, 4}, 19), true, 1e-4, tol_op, analytic);
    out.push_back(grad_row("pool_linear_softmax_ce", rep, tol_op));
  }
  {
    ParamStore<double> none;
    auto rep = gradcheck(
        [](auto& t, auto&, Var x) {
          Var z = embed_complex_diff(t, x);
          Var y = real_part_diff(t, ifft2_diff(t, fft2_diff(t, z)));
          return sum_all_diff(t, relu(t, y));
        },
        none, rr(Shape{1, 2, 8, 8}, 20), true, 1e-4, tol_op, analytic);
    out.push_back(grad_row("fft2_ifft2_round_trip", rep, tol_op));
  }
  {
    ParamStore<double> ps;
    ps.add("mr", rr(Shape{1, 2, 4, 4}, 21));
    ps.add("mi", rr(Shape{1, 2, 4, 4}, 22));
    auto rep = gradcheck(
        [](auto& t, auto&, Var x) {
          Var z = fft2_diff(t, embed_complex_diff(t, x));
          Var m = make_complex_diff(t, t.param("mr"), t.param("mi"));
          Var y = complex_add(t, complex_hadamard(t, z, m), z);
          return sum_all_diff(t, real_part_diff(t, ifft2_diff(t, y)));
        },
        ps, rr(Shape{1, 2, 4, 4}, 23), true, 1e-4, tol_op, analytic);
    out.push_back(grad_row("complex_hadamard_add", rep, tol_op));
  }
  {
    AffNetConfig cfg;
    cfg.mixer = MixerKind::AffFft;
    cfg.groups = 4;
    cfg.mbconv_expansion = 2;
    const BlockPlan bp{"blk", 4, 4};
    ParamStore<double> ps;
    netdetail::add_layer_norm<double>(ps, "blk.ln1", bp.channels);
    netdetail::add_mbconv(ps, 27,
                          MbConvPlan{"blk.mb", bp.channels, bp.channels, 1,
                                     bp.resolution},
                          cfg.mbconv_expansion);
    netdetail::add_layer_norm<double>(ps, "blk.ln2", bp.channels);
    netdetail::add_mixer(ps, 27, bp, cfg.mixer, cfg.groups);
    // finite differences need a generic point: the fresh init has exact-zero
    // biases, and a ReLU6-silenced patch then parks a depthwise
    // preactivation exactly on the kink, where FD says slope/2
    Rng jitter = substream(28, "verify_grad");
    for (const std::string& name : ps.names()) {
      Tensor<double>& v = ps.value(name);
      for (Index i = 0; i < v.numel(); ++i) {
        v[i] += jitter.uniform(-0.05, 0.05);
      }
    }
    auto rep = gradcheck(
        [&bp, &cfg](auto& t, auto&, Var x) {
          return sum_all_diff(
              t, block_fragment(t, x, bp, cfg, MixerRoute::normal));
        },
        ps, rr(Shape{1, 4, 4, 4}, 26), true, 1e-4, tol_block, analytic);
    out.push_back(grad_row("aff_block", rep, tol_block));
  }
}

// --------------------------------------------------------- equivalence

template <typename S>
void equivalence_suite(std::vector<PropertyResult>& out, double tol) {
  const std::vector<Shape> shapes = {Shape{1, 2, 4, 4}, Shape{1, 4, 8, 8},
                                     Shape{2, 8, 16, 16}};
  double err = 0.0;
  Index cases = 0;
  for (const Shape& shape : shapes) {
    for (std::uint64_t seed = 1; seed <= 7; ++seed) {
      Rng rng = substream(seed, "verify_equiv");
      const auto x = rand_real<S>(shape, rng);
      const auto p = make_aff_mixer_params<S>(
          shape.dim(1), 2, seed * 31 + static_cast<std::uint64_t>(shape.dim(3)));
      const auto direct =
          circular_dwconv_oracle(x, real_part(effective_kernel(x, p)));
      err = std::max(err, max_rel_err(aff_forward(x, p), direct));
      ++cases;
    }
  }
  out.push_back(bounded("equivalence", "fft_filter_equals_circular_dwconv",
                        err, tol,
                        std::to_string(cases) + " seeded (input,params) pairs"));

  double cerr = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng = substream(seed, "verify_commut");
    const auto x = rand_real<S>(Shape{1, 3, 8, 8}, rng);
    const auto w = rand_real<S>(Shape{3, 3}, rng);
    cerr = std::max(cerr, commutativity_check(x, w));
  }
  out.push_back(bounded("equivalence", "channel_linear_commutes_with_fft",
                        cerr, tol, "10 seeded cases"));

  Rng rng = substream(3, "verify_relu_gap");
  const auto x = rand_real<S>(Shape{1, 3, 8, 8}, rng);
  out.push_back(witness("equivalence", "relu_breaks_fft_commutation",
                        relu_commutativity_gap(x), 1e-3,
                        "nonlinearity negative control"));
}

// ---------------------------------------------------------- properties

template <typename S>
void properties_suite(std::vector<PropertyResult>& out, double small) {
  Rng rng = substream(11, "verify_props");
  const auto p = make_aff_mixer_params<S>(4, 2, 41);

  {
    const auto x1 = rand_real<S>(Shape{1, 4, 8, 8}, rng);
    const auto x2 = rand_real<S>(Shape{1, 4, 8, 8}, rng);
    const auto k1 = real_part(effective_kernel(x1, p));
    const auto k2 = real_part(effective_kernel(x2, p));
    double gap = 0.0;
    for (Index i = 0; i < k1.numel(); ++i) {
      gap = std::max(gap, static_cast<double>(std::abs(k1[i] - k2[i])));
    }
    out.push_back(witness("properties", "kernels_adapt_to_input", gap, 1e-3,
                          "same params, two inputs"));
  }
  {
    PropertyResult r{"properties", "one_param_set_serves_two_sizes",
                     false,        0.0,
                     0.0,          true,
                     "8x8 and 16x16 through one AffMixerParams"};
    try {
      const auto y8 = aff_forward(rand_real<S>(Shape{1, 4, 8, 8}, rng), p);
      const auto y16 = aff_forward(rand_real<S>(Shape{1, 4, 16, 16}, rng), p);
      r.pass = y8.shape() == Shape{1, 4, 8, 8} &&
               y16.shape() == Shape{1, 4, 16, 16};
    } catch (const Error& e) {
      r.note = std::string("threw: ") + e.what();
    }
    out.push_back(r);
  }
  {
    PropertyResult r{"properties", "static_mask_rejects_resize",
                     false,        0.0,
                     0.0,          true,
                     "expects SizeError at 16x16"};
    auto sp = make_mixer_params<S>(MixerKind::StaticMask, 4, 2, 8, 8, 43);
    try {
      (void)variant_forward(rand_real<S>(Shape{1, 4, 16, 16}, rng), sp);
    } catch (const SizeError&) {
      r.pass = true;
    } catch (const Error& e) {
      r.note = std::string("wrong error: ") + e.what();
    }
    out.push_back(r);
  }
  {
    const auto x = rand_real<S>(Shape{1, 4, 8, 8}, rng);
    const auto k = real_part(effective_kernel(x, p));
    double gap = 1e300;
    for (Index c = 0; c + 1 < k.dim(1); ++c) {
      double g = 0.0;
      const S* a = k.data() + c * 64;
      const S* b = k.data() + (c + 1) * 64;
      for (Index i = 0; i < 64; ++i) {
        g = std::max(g, static_cast<double>(std::abs(a[i] - b[i])));
      }
      gap = std::min(gap, g);
    }
    out.push_back(witness("properties", "kernels_differ_per_channel", gap,
                          1e-3, "adjacent channel pairs, AFF mixer"));
  }
  {
    auto sp = make_mixer_params<S>(MixerKind::SpatialSharedMask, 4, 2, 8, 8, 47);
    const auto x = rand_real<S>(Shape{1, 4, 8, 8}, rng);
    const auto k = real_part(variant_kernel(x, sp));
    double gap = 0.0;
    for (Index c = 1; c < k.dim(1); ++c) {
      const S* a = k.data();
      const S* b = k.data() + c * 64;
      for (Index i = 0; i < 64; ++i) {
        gap = std::max(gap, static_cast<double>(std::abs(a[i] - b[i])));
      }
    }
    out.push_back(bounded("properties", "shared_mask_kernel_channel_identical",
                          gap, small, "channel-shared ablation"));
  }
}

}  // namespace verifydetail

// Named verification suites backing both the CLI and the acceptance run.
// `precision` picks the scalar type under test; tolerances widen for f32.
inline std::vector<PropertyResult> run_verify_suite(const std::string& suite,
                                                    Precision precision) {
  const bool f64 = precision == Precision::f64;
  std::vector<PropertyResult> out;
  bool known = false;
  if (suite == "fft" || suite == "all") {
    known = true;
    if (f64) {
      verifydetail::fft_suite<double>(out, 1e-10);
    } else {
      verifydetail::fft_suite<float>(out, 1e-4);
    }
  }
  if (suite == "gradcheck" || suite == "all") {
    known = true;
    if (f64) {
      verifydetail::gradcheck_suite(out, 1e-6, 1e-4, Precision::f64);
    } else {
      verifydetail::gradcheck_suite(out, 1e-4, 1e-3, Precision::f32);
    }
  }
  if (suite == "equivalence" || suite == "all") {
    known = true;
    if (f64) {
      verifydetail::equivalence_suite<double>(out, 1e-10);
    } else {
      verifydetail::equivalence_suite<float>(out, 1e-4);
    }
  }
  if (suite == "properties" || suite == "all") {
    known = true;
    if (f64) {
      verifydetail::properties_suite<double>(out, 0.0);
    } else {
      verifydetail::properties_suite<float>(out, 0.0);
    }
  }
  if (!known) throw ConfigError("unknown verify suite '" + suite + "'");
  return out;
}

}  // namespace aff

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "aff/autodiff.hpp"

namespace aff {

enum class Precision { f32, f64 };

inline const char* precision_name(Precision p) {
  return p == Precision::f32 ? "f32" : "f64";
}

struct GradcheckEntry {
  std::string name;  // parameter name, or "input"
  double max_err = 0.0;
};

struct GradcheckReport {
  double tol = 0.0;
  std::vector<GradcheckEntry> entries;

  bool pass() const {
    for (const auto& e : entries) {
      if (!(e.max_err <= tol)) return false;  // NaN fails too
    }
    return true;
  }

  const GradcheckEntry& worst() const {
    if (entries.empty()) throw ConfigError("GradcheckReport: no entries");
    std::size_t w = 0;
    for (std::size_t i = 1; i < entries.size(); ++i) {
      if (!(entries[i].max_err <= entries[w].max_err)) w = i;
    }
    return entries[w];
  }
};

// Checks the analytic gradients of a scalar-loss fragment against central
// finite differences. The fragment must be scalar-generic:
//   Var frag(Tape<T>&, ParamStore<T>&, Var input)   for T in {float, double}
// The FD reference always runs at f64; `analytic` selects the precision of
// the gradients under test (f32 analytic vs f64 FD is the only way to reach
// a 1e-4 tolerance, pure-f32 differences drown in cancellation noise).
// Per-element error: |fd - g| / max(1, |fd|, |g|).
template <typename Frag>
GradcheckReport gradcheck(Frag&& frag, const ParamStore<double>& params0,
                          const Tensor<double>& input0, bool check_input,
                          double eps, double tol,
                          Precision analytic = Precision::f64) {
  auto eval = [&](const ParamStore<double>& p,
                  const Tensor<double>& x) -> double {
    ParamStore<double> ps = p;
    Tape<double> t(&ps);
    Var xin = t.input(x);
    Var loss = frag(t, ps, xin);
    const Tensor<double>& lv = t.val(loss);
    if (lv.numel() != 1) {
      throw RankError("gradcheck: fragment loss must be scalar");
    }
    return lv[0];
  };

  // Two evaluations at the base point must agree bitwise.
  if (eval(params0, input0) != eval(params0, input0)) {
    throw DeterminismError(
        "gradcheck: fragment evaluated twice at the same point disagreed");
  }

  std::map<std::string, Tensor<double>> agrad;
  Tensor<double> ainput;
  if (analytic == Precision::f64) {
    ParamStore<double> ps = params0;
    ps.zero_grads();
    Tape<double> t(&ps);
    Var xin = t.input(input0);
    Var loss = frag(t, ps, xin);
    t.backward(loss);
    for (const auto& name : ps.names()) agrad[name] = ps.grad(name);
    ainput = t.grad(xin);
  } else {
    if constexpr (std::is_invocable_v<Frag&, Tape<float>&, ParamStore<float>&,
                                      Var>) {
      ParamStore<float> ps = params0.template cast<float>();
      ps.zero_grads();
      Tape<float> t(&ps);
      Var xin = t.input(input0.cast<float>());
      Var loss = frag(t, ps, xin);
      t.backward(loss);
      for (const auto& name : ps.names()) {
        agrad[name] = ps.grad(name).template cast<double>();
      }
      ainput = t.grad(xin).cast<double>();
    } else {
      throw ConfigError("gradcheck: fragment is not scalar-generic");
    }
  }

  GradcheckReport rep;
  rep.tol = tol;

  auto fd_entry = [&](const std::string& label, const Tensor<double>& analytic_g,
                      bool is_input) {
    GradcheckEntry entry{label, 0.0};
    for (Index i = 0; i < analytic_g.numel(); ++i) {
      ParamStore<double> pp = params0;
      Tensor<double> xp = input0;
      double* slot = is_input ? &xp[i] : &pp.value(label)[i];
      const double keep = *slot;
      *slot = keep + eps;
      const double fplus = eval(pp, xp);
      *slot = keep - eps;
      const double fminus = eval(pp, xp);
      const double fd = (fplus - fminus) / (2.0 * eps);
      const double g = analytic_g[i];
      const double err =
          std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)});
      if (!(err <= entry.max_err)) entry.max_err = err;  // captures NaN
    }
    rep.entries.push_back(std::move(entry));
  };

  for (const auto& name : params0.names()) fd_entry(name, agrad[name], false);
  if (check_input) fd_entry("input", ainput, true);
  return rep;
}

}  // namespace aff

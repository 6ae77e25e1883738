#pragma once

#include <complex>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "aff/ops.hpp"
#include "aff/tensor.hpp"

namespace aff {

// Named parameters: value plus accumulated gradient, iterated in sorted
// name order everywhere (the determinism contract depends on it).
template <typename S>
class ParamStore {
 public:
  struct Entry {
    Tensor<S> value;
    Tensor<S> grad;
  };

  void add(const std::string& name, Tensor<S> value) {
    if (entries_.count(name)) {
      throw ConfigError("ParamStore: duplicate parameter '" + name + "'");
    }
    Entry e;
    e.grad = Tensor<S>(value.shape());
    e.value = std::move(value);
    entries_.emplace(name, std::move(e));
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Tensor<S>& value(const std::string& name) { return entry(name).value; }
  const Tensor<S>& value(const std::string& name) const {
    return entry(name).value;
  }
  Tensor<S>& grad(const std::string& name) { return entry(name).grad; }
  const Tensor<S>& grad(const std::string& name) const {
    return entry(name).grad;
  }

  void zero_grads() {
    for (auto& [k, e] : entries_) {
      for (Index i = 0; i < e.grad.numel(); ++i) e.grad[i] = S(0);
    }
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (auto& [k, e] : entries_) out.push_back(k);
    return out;
  }

  Index scalar_count() const {
    Index n = 0;
    for (auto& [k, e] : entries_) n += e.value.numel();
    return n;
  }

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (auto& [k, e] : entries_) {
      out.add(k, e.value.template cast<U>());
    }
    return out;
  }

 private:
  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
      throw ConfigError("ParamStore: unknown parameter '" + name + "'");
    }
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    return const_cast<ParamStore*>(this)->entry(name);
  }

  std::map<std::string, Entry> entries_;
};

struct Var {
  int id = -1;
};

// Append-only reverse-mode tape. Each recorded node owns its forward value
// (real or complex) and a closure that pushes dL/dself into its parents'
// gradient slots; backward() walks the list in reverse append order, so
// fan-out accumulates additively. Gradients for parameter leaves are added
// into the bound ParamStore at the end of the sweep.
template <typename S>
class Tape {
 public:
  using Real = Tensor<S>;
  using Cplx = Tensor<std::complex<S>>;
  using BackFn = std::function<void(Tape&, int)>;

  Tape() = default;
  explicit Tape(ParamStore<S>* store) : store_(store) {}

  ParamStore<S>* store() { return store_; }

  Var input(Real x) { return record_real(std::move(x), {}, nullptr); }
  Var input(Cplx z) { return record_complex(std::move(z), {}, nullptr); }

  Var param(const std::string& name) {
    if (!store_) throw ConfigError("Tape::param: no ParamStore bound");
    Var v = record_real(store_->value(name), {}, nullptr);
    nodes_[static_cast<std::size_t>(v.id)].param_name = name;
    return v;
  }

  Var record_real(Real value, std::vector<int> parents, BackFn bwd) {
    nodes_.push_back(Node{std::move(parents), std::move(bwd), false, {}});
    rval_.push_back(std::move(value));
    cval_.emplace_back();
    rgrad_.emplace_back();
    cgrad_.emplace_back();
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var record_complex(Cplx value, std::vector<int> parents, BackFn bwd) {
    nodes_.push_back(Node{std::move(parents), std::move(bwd), true, {}});
    rval_.emplace_back();
    cval_.push_back(std::move(value));
    rgrad_.emplace_back();
    cgrad_.emplace_back();
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool is_complex(Var v) const { return node(v).complex; }

  const Real& val(Var v) const {
    if (node(v).complex) {
      throw TypeError("Tape::val: node " + std::to_string(v.id) +
                      " is complex");
    }
    return rval_[static_cast<std::size_t>(v.id)];
  }
  const Cplx& cval(Var v) const {
    if (!node(v).complex) {
      throw TypeError("Tape::cval: node " + std::to_string(v.id) + " is real");
    }
    return cval_[static_cast<std::size_t>(v.id)];
  }

  // Gradient of the last backward() target w.r.t. v; zeros if v was not on
  // the path.
  Real grad(Var v) const {
    if (node(v).complex) {
      throw TypeError("Tape::grad: node is complex, use cgrad");
    }
    const Real& g = rgrad_[static_cast<std::size_t>(v.id)];
    if (g.vec().empty()) return Real(rval_[static_cast<std::size_t>(v.id)].shape());
    return g;
  }
  Cplx cgrad(Var v) const {
    if (!node(v).complex) {
      throw TypeError("Tape::cgrad: node is real, use grad");
    }
    const Cplx& g = cgrad_[static_cast<std::size_t>(v.id)];
    if (g.vec().empty()) return Cplx(cval_[static_cast<std::size_t>(v.id)].shape());
    return g;
  }

  // Gradient slots for backward kernels: allocated (zeroed) on first touch.
  Real& rgrad_slot(int id) {
    Real& g = rgrad_[static_cast<std::size_t>(id)];
    if (g.vec().empty()) g = Real(rval_[static_cast<std::size_t>(id)].shape());
    return g;
  }
  Cplx& cgrad_slot(int id) {
    Cplx& g = cgrad_[static_cast<std::size_t>(id)];
    if (g.vec().empty()) g = Cplx(cval_[static_cast<std::size_t>(id)].shape());
    return g;
  }
  bool has_grad(int id) const {
    return !rgrad_[static_cast<std::size_t>(id)].vec().empty() ||
           !cgrad_[static_cast<std::size_t>(id)].vec().empty();
  }

  // Seeds dL/dloss = 1 and sweeps the tape in reverse. The loss must be a
  // real scalar (one element). Parameter gradients are accumulated into the
  // bound store, so repeated backward calls add up unless grads are zeroed.
  void backward(Var loss) {
    const Node& ln = node(loss);
    if (ln.complex) {
      throw TypeError("Tape::backward: loss must be real");
    }
    if (rval_[static_cast<std::size_t>(loss.id)].numel() != 1) {
      throw RankError("Tape::backward: loss must be scalar, got shape " +
                      rval_[static_cast<std::size_t>(loss.id)].shape().str());
    }
    for (auto& g : rgrad_) g = Real();
    for (auto& g : cgrad_) g = Cplx();
    rgrad_slot(loss.id)[0] = S(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.backward || !has_grad(id)) continue;
      n.backward(*this, id);
    }
    if (store_) {
      for (int id = 0; id <= loss.id; ++id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.param_name.empty()) continue;
        const Real& g = rgrad_[static_cast<std::size_t>(id)];
        if (g.vec().empty()) continue;
        Tensor<S>& pg = store_->grad(n.param_name);
        for (Index i = 0; i < pg.numel(); ++i) pg[i] += g[i];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<int> parents;
    BackFn backward;
    bool complex = false;
    std::string param_name;
  };

  const Node& node(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
      throw ConfigError("Tape: invalid node id " + std::to_string(v.id));
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  std::vector<Node> nodes_;
  std::vector<Real> rval_, rgrad_;
  std::vector<Cplx> cval_, cgrad_;
  ParamStore<S>* store_ = nullptr;
};

// ------------------------------------------------------------ tape ops

template <typename S>
Var relu(Tape<S>& t, Var x) {
  auto y = kern::relu_fwd(t.val(x));
  return t.record_real(std::move(y), {x.id}, [x](Tape<S>& t, int self) {
    kern::relu_bwd(t.val(x), t.rgrad_slot(self), t.rgrad_slot(x.id));
  });
}

template <typename S>
Var relu6(Tape<S>& t, Var x) {
  auto y = kern::relu6_fwd(t.val(x));
  return t.record_real(std::move(y), {x.id}, [x](Tape<S>& t, int self) {
    kern::relu6_bwd(t.val(x), t.rgrad_slot(self), t.rgrad_slot(x.id));
  });
}

template <typename S>
Var group_pointwise_linear(Tape<S>& t, Var x, Var w, Var b, Index groups) {
  auto y = kern::group_linear_fwd(t.val(x), t.val(w), t.val(b), groups);
  return t.record_real(
      std::move(y), {x.id, w.id, b.id}, [x, w, b, groups](Tape<S>& t, int self) {
        kern::group_linear_bwd(t.val(x), t.val(w), groups, t.rgrad_slot(self),
                               t.rgrad_slot(x.id), t.rgrad_slot(w.id),
                               t.rgrad_slot(b.id));
      });
}

template <typename S>
Var pointwise_conv(Tape<S>& t, Var x, Var w, Var b) {
  return group_pointwise_linear(t, x, w, b, 1);
}

template <typename S>
Var depthwise_conv3x3(Tape<S>& t, Var x, Var k, Var b, Index stride) {
  auto y = kern::dwconv3x3_fwd(t.val(x), t.val(k), t.val(b), stride);
  return t.record_real(
      std::move(y), {x.id, k.id, b.id}, [x, k, b, stride](Tape<S>& t, int self) {
        kern::dwconv3x3_bwd(t.val(x), t.val(k), stride, t.rgrad_slot(self),
                            t.rgrad_slot(x.id), t.rgrad_slot(k.id),
                            t.rgrad_slot(b.id));
      });
}

template <typename S>
Var conv3x3(Tape<S>& t, Var x, Var w, Var b, Index stride) {
  auto y = kern::conv3x3_fwd(t.val(x), t.val(w), t.val(b), stride);
  return t.record_real(
      std::move(y), {x.id, w.id, b.id}, [x, w, b, stride](Tape<S>& t, int self) {
        kern::conv3x3_bwd(t.val(x), t.val(w), stride, t.rgrad_slot(self),
                          t.rgrad_slot(x.id), t.rgrad_slot(w.id),
                          t.rgrad_slot(b.id));
      });
}

template <typename S>
Var layer_norm(Tape<S>& t, Var x, Var gamma, Var beta,
               S eps = static_cast<S>(1e-5)) {
  auto ctx = std::make_shared<kern::LayerNormCtx<S>>();
  auto y = kern::layer_norm_fwd(t.val(x), t.val(gamma), t.val(beta), eps, *ctx);
  return t.record_real(std::move(y), {x.id, gamma.id, beta.id},
                       [x, gamma, beta, ctx](Tape<S>& t, int self) {
                         kern::layer_norm_bwd(t.val(x), t.val(gamma), *ctx,
                                              t.rgrad_slot(self),
                                              t.rgrad_slot(x.id),
                                              t.rgrad_slot(gamma.id),
                                              t.rgrad_slot(beta.id));
                       });
}

template <typename S>
Var global_avg_pool(Tape<S>& t, Var x) {
  const Index H = t.val(x).dim(2), W = t.val(x).dim(3);
  auto y = kern::gap_fwd(t.val(x));
  return t.record_real(std::move(y), {x.id}, [x, H, W](Tape<S>& t, int self) {
    kern::gap_bwd(H, W, t.rgrad_slot(self), t.rgrad_slot(x.id));
  });
}

template <typename S>
Var linear(Tape<S>& t, Var x, Var w, Var b) {
  auto y = kern::linear_fwd(t.val(x), t.val(w), t.val(b));
  return t.record_real(std::move(y), {x.id, w.id, b.id},
                       [x, w, b](Tape<S>& t, int self) {
                         kern::linear_bwd(t.val(x), t.val(w),
                                          t.rgrad_slot(self), t.rgrad_slot(x.id),
                                          t.rgrad_slot(w.id),
                                          t.rgrad_slot(b.id));
                       });
}

template <typename S>
Var softmax_cross_entropy(Tape<S>& t, Var logits, std::vector<int> labels,
                          double smoothing) {
  auto probs = std::make_shared<Tensor<S>>();
  const double loss =
      kern::softmax_ce_fwd(t.val(logits), labels, smoothing, *probs);
  Tensor<S> out(Shape{});
  out[0] = static_cast<S>(loss);
  return t.record_real(
      std::move(out), {logits.id},
      [logits, labels = std::move(labels), smoothing, probs](Tape<S>& t,
                                                             int self) {
        kern::softmax_ce_bwd(*probs, labels, smoothing, t.rgrad_slot(self)[0],
                             t.rgrad_slot(logits.id));
      });
}

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  detail::ensure_same_shape(t.val(a), t.val(b), "add");
  Tensor<S> y(t.val(a).shape());
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  for (Index i = 0; i < y.numel(); ++i) y[i] = av[i] + bv[i];
  return t.record_real(std::move(y), {a.id, b.id}, [a, b](Tape<S>& t, int self) {
    const auto& g = t.rgrad_slot(self);
    auto& da = t.rgrad_slot(a.id);
    auto& db = t.rgrad_slot(b.id);
    for (Index i = 0; i < g.numel(); ++i) {
      da[i] += g[i];
      db[i] += g[i];
    }
  });
}

template <typename S>
Var scale_by(Tape<S>& t, Var x, S c) {
  Tensor<S> y(t.val(x).shape());
  const auto& xv = t.val(x);
  for (Index i = 0; i < y.numel(); ++i) y[i] = xv[i] * c;
  return t.record_real(std::move(y), {x.id}, [x, c](Tape<S>& t, int self) {
    const auto& g = t.rgrad_slot(self);
    auto& dx = t.rgrad_slot(x.id);
    for (Index i = 0; i < g.numel(); ++i) dx[i] += g[i] * c;
  });
}

template <typename S>
Var sum_all_diff(Tape<S>& t, Var x) {
  Tensor<S> y(Shape{});
  y[0] = sum_all(t.val(x));
  return t.record_real(std::move(y), {x.id}, [x](Tape<S>& t, int self) {
    const S g = t.rgrad_slot(self)[0];
    auto& dx = t.rgrad_slot(x.id);
    for (Index i = 0; i < dx.numel(); ++i) dx[i] += g;
  });
}

// ------------------------------------------------------- complex tape ops

template <typename S>
Var embed_complex_diff(Tape<S>& t, Var x) {
  auto z = make_complex(t.val(x));
  return t.record_complex(std::move(z), {x.id}, [x](Tape<S>& t, int self) {
    const auto& g = t.cgrad_slot(self);
    auto& dx = t.rgrad_slot(x.id);
    for (Index i = 0; i < dx.numel(); ++i) dx[i] += g[i].real();
  });
}

template <typename S>
Var real_part_diff(Tape<S>& t, Var z) {
  auto y = real_part(t.cval(z));
  return t.record_real(std::move(y), {z.id}, [z](Tape<S>& t, int self) {
    const auto& g = t.rgrad_slot(self);
    auto& dz = t.cgrad_slot(z.id);
    for (Index i = 0; i < dz.numel(); ++i) dz[i] += std::complex<S>(g[i], S(0));
  });
}

template <typename S>
Var make_complex_diff(Tape<S>& t, Var re, Var im) {
  auto z = make_complex(t.val(re), t.val(im));
  return t.record_complex(std::move(z), {re.id, im.id},
                          [re, im](Tape<S>& t, int self) {
                            const auto& g = t.cgrad_slot(self);
                            auto& dre = t.rgrad_slot(re.id);
                            auto& dim = t.rgrad_slot(im.id);
                            for (Index i = 0; i < g.numel(); ++i) {
                              dre[i] += g[i].real();
                              dim[i] += g[i].imag();
                            }
                          });
}

// Forward DFT adjoint is H*W times the inverse DFT (conjugate transpose),
// under the unnormalized-forward convention in fft.hpp.
template <typename S>
Var fft2_diff(Tape<S>& t, Var z) {
  auto y = fft2(t.cval(z));
  return t.record_complex(std::move(y), {z.id}, [z](Tape<S>& t, int self) {
    const auto& g = t.cgrad_slot(self);
    auto back = ifft2(g);
    const S hw = static_cast<S>(g.dim(g.rank() - 2) * g.dim(g.rank() - 1));
    auto& dz = t.cgrad_slot(z.id);
    for (Index i = 0; i < dz.numel(); ++i) dz[i] += back[i] * hw;
  });
}

template <typename S>
Var ifft2_diff(Tape<S>& t, Var z) {
  auto y = ifft2(t.cval(z));
  return t.record_complex(std::move(y), {z.id}, [z](Tape<S>& t, int self) {
    const auto& g = t.cgrad_slot(self);
    auto back = fft2(g);
    const S inv_hw =
        S(1) / static_cast<S>(g.dim(g.rank() - 2) * g.dim(g.rank() - 1));
    auto& dz = t.cgrad_slot(z.id);
    for (Index i = 0; i < dz.numel(); ++i) dz[i] += back[i] * inv_hw;
  });
}

template <typename S>
Var complex_hadamard(Tape<S>& t, Var a, Var b) {
  auto y = kern::hadamard_fwd(t.cval(a), t.cval(b));
  return t.record_complex(std::move(y), {a.id, b.id},
                          [a, b](Tape<S>& t, int self) {
                            kern::hadamard_bwd(t.cval(a), t.cval(b),
                                               t.cgrad_slot(self),
                                               t.cgrad_slot(a.id),
                                               t.cgrad_slot(b.id));
                          });
}

template <typename S>
Var complex_add(Tape<S>& t, Var a, Var b) {
  detail::ensure_same_shape(t.cval(a), t.cval(b), "complex_add");
  Tensor<std::complex<S>> y(t.cval(a).shape());
  const auto& av = t.cval(a);
  const auto& bv = t.cval(b);
  for (Index i = 0; i < y.numel(); ++i) y[i] = av[i] + bv[i];
  return t.record_complex(std::move(y), {a.id, b.id},
                          [a, b](Tape<S>& t, int self) {
                            const auto& g = t.cgrad_slot(self);
                            auto& da = t.cgrad_slot(a.id);
                            auto& db = t.cgrad_slot(b.id);
                            for (Index i = 0; i < g.numel(); ++i) {
                              da[i] += g[i];
                              db[i] += g[i];
                            }
                          });
}

template <typename S>
Var complex_to_planes(Tape<S>& t, Var z) {
  auto y = kern::complex_to_planes_fwd(t.cval(z));
  return t.record_real(std::move(y), {z.id}, [z](Tape<S>& t, int self) {
    kern::complex_to_planes_bwd(t.rgrad_slot(self), t.cgrad_slot(z.id));
  });
}

template <typename S>
Var planes_to_complex(Tape<S>& t, Var x) {
  auto z = kern::planes_to_complex_fwd(t.val(x));
  return t.record_complex(std::move(z), {x.id}, [x](Tape<S>& t, int self) {
    kern::planes_to_complex_bwd(t.cgrad_slot(self), t.rgrad_slot(x.id));
  });
}

// [B,C,H,W] -> [B,1,H,W], mean over channels.
template <typename S>
Var complex_channel_mean(Tape<S>& t, Var z) {
  const auto& zv = t.cval(z);
  kern::detail::require_rank4(zv, "complex_channel_mean");
  const Index B = zv.dim(0), C = zv.dim(1), HW = zv.dim(2) * zv.dim(3);
  Tensor<std::complex<S>> y(Shape{B, 1, zv.dim(2), zv.dim(3)});
  const S invc = S(1) / static_cast<S>(C);
  for (Index n = 0; n < B; ++n) {
    std::complex<S>* yp = y.data() + n * HW;
    for (Index c = 0; c < C; ++c) {
      const std::complex<S>* zp = zv.data() + (n * C + c) * HW;
      for (Index p = 0; p < HW; ++p) yp[p] += zp[p];
    }
    for (Index p = 0; p < HW; ++p) yp[p] *= invc;
  }
  return t.record_complex(std::move(y), {z.id}, [z, C](Tape<S>& t, int self) {
    const auto& g = t.cgrad_slot(self);
    auto& dz = t.cgrad_slot(z.id);
    const Index B = dz.dim(0), HW = dz.dim(2) * dz.dim(3);
    const S invc = S(1) / static_cast<S>(C);
    for (Index n = 0; n < B; ++n) {
      const std::complex<S>* gp = g.data() + n * HW;
      for (Index c = 0; c < C; ++c) {
        std::complex<S>* dp = dz.data() + (n * C + c) * HW;
        for (Index p = 0; p < HW; ++p) dp[p] += gp[p] * invc;
      }
    }
  });
}

// [B,1,H,W] -> [B,C,H,W], broadcast over channels.
template <typename S>
Var repeat_channel(Tape<S>& t, Var z, Index C) {
  const auto& zv = t.cval(z);
  kern::detail::require_rank4(zv, "repeat_channel");
  kern::detail::require(zv.dim(1) == 1, "repeat_channel",
                        "input channel dim must be 1, got " +
                            zv.shape().str());
  const Index B = zv.dim(0), HW = zv.dim(2) * zv.dim(3);
  Tensor<std::complex<S>> y(Shape{B, C, zv.dim(2), zv.dim(3)});
  for (Index n = 0; n < B; ++n) {
    const std::complex<S>* zp = zv.data() + n * HW;
    for (Index c = 0; c < C; ++c) {
      std::complex<S>* yp = y.data() + (n * C + c) * HW;
      for (Index p = 0; p < HW; ++p) yp[p] = zp[p];
    }
  }
  return t.record_complex(std::move(y), {z.id}, [z, C](Tape<S>& t, int self) {
    const auto& g = t.cgrad_slot(self);
    auto& dz = t.cgrad_slot(z.id);
    const Index B = dz.dim(0), HW = dz.dim(2) * dz.dim(3);
    for (Index n = 0; n < B; ++n) {
      std::complex<S>* dp = dz.data() + n * HW;
      for (Index c = 0; c < C; ++c) {
        const std::complex<S>* gp = g.data() + (n * C + c) * HW;
        for (Index p = 0; p < HW; ++p) dp[p] += gp[p];
      }
    }
  });
}

// [C,H,W] -> [B,C,H,W], broadcast over the batch.
template <typename S>
Var repeat_batch(Tape<S>& t, Var z, Index B) {
  const auto& zv = t.cval(z);
  if (zv.rank() != 3) {
    throw RankError("repeat_batch: expected [C,H,W], got " +
                    zv.shape().str());
  }
  const Index CHW = zv.numel();
  Tensor<std::complex<S>> y(Shape{B, zv.dim(0), zv.dim(1), zv.dim(2)});
  for (Index n = 0; n < B; ++n) {
    std::complex<S>* yp = y.data() + n * CHW;
    for (Index i = 0; i < CHW; ++i) yp[i] = zv[i];
  }
  return t.record_complex(std::move(y), {z.id}, [z](Tape<S>& t, int self) {
    const auto& g = t.cgrad_slot(self);
    auto& dz = t.cgrad_slot(z.id);
    const Index B = g.dim(0), CHW = dz.numel();
    for (Index n = 0; n < B; ++n) {
      const std::complex<S>* gp = g.data() + n * CHW;
      for (Index i = 0; i < CHW; ++i) dz[i] += gp[i];
    }
  });
}

}  // namespace aff

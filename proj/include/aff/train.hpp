#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "aff/checkpoint.hpp"
#include "aff/dataset.hpp"
#include "aff/io.hpp"
#include "aff/network.hpp"

namespace aff {

enum class Augment { none, crop_flip };

inline const char* augment_name(Augment a) {
  switch (a) {
    case Augment::none: return "none";
    case Augment::crop_flip: return "crop_flip";
  }
  throw ConfigError("augment_name: bad enum value");
}

inline Augment parse_augment(const std::string& s) {
  if (s == "none") return Augment::none;
  if (s == "crop_flip") return Augment::crop_flip;
  throw ConfigError("unknown augment '" + s + "'");
}

// Desk-scale defaults. optimizer/schedule/precision are stored as strings so
// the flat config file round-trips them; only the listed values exist.
struct TrainConfig {
  std::string optimizer = "adamw";
  std::string schedule = "cosine";
  double base_lr = 2e-3;
  double min_lr = 2e-4;
  double weight_decay = 0.05;
  Index warmup_steps = 100;
  Index total_epochs = 5;
  Index batch_size = 64;
  double label_smoothing = 0.1;
  std::uint64_t seed = 1;
  std::string precision = "f32";
  Augment augment = Augment::none;
  // wall_ms is wall-clock and hence nondeterministic; timing=false writes 0
  // there so two same-seed runs produce byte-identical CSVs
  bool timing = true;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.optimizer != "adamw") {
    throw ConfigError("optimizer must be 'adamw', got '" + cfg.optimizer +
                      "'");
  }
  if (cfg.schedule != "cosine") {
    throw ConfigError("schedule must be 'cosine', got '" + cfg.schedule + "'");
  }
  if (cfg.precision != "f32" && cfg.precision != "f64") {
    throw ConfigError("precision must be f32 or f64, got '" + cfg.precision +
                      "'");
  }
  if (!(cfg.base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (cfg.min_lr < 0.0 || cfg.min_lr > cfg.base_lr) {
    throw ConfigError("min_lr must lie in [0, base_lr]");
  }
  if (cfg.weight_decay < 0.0) {
    throw ConfigError("weight_decay must be non-negative");
  }
  if (cfg.warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
  if (cfg.total_epochs < 0) throw ConfigError("total_epochs must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.label_smoothing < 0.0 || cfg.label_smoothing >= 1.0) {
    throw ConfigError("label_smoothing must be in [0,1)");
  }
}

// Linear warmup from 0 to base_lr over warmup_steps, then a half cosine
// from base_lr down to min_lr that lands on min_lr exactly at the final
// step. Continuous at the junction: both pieces give base_lr there.
inline double lr_at(Index step, Index total_steps, const TrainConfig& cfg) {
  const Index w = cfg.warmup_steps;
  if (step < w) {
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(w);
  }
  const Index denom = total_steps - 1 - w;
  if (denom <= 0) return step == w ? cfg.base_lr : cfg.min_lr;
  const double prog = static_cast<double>(step - w) / static_cast<double>(denom);
  return cfg.min_lr + 0.5 * (cfg.base_lr - cfg.min_lr) *
                          (1.0 + std::cos(3.14159265358979323846 * prog));
}

// ---------------------------------------------------------------- AdamW

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// Decoupled weight decay applied before the moment update, so a step with
// zero gradient and fresh state is exactly p *= 1 - lr*wd. Moments are kept
// in 64-bit for both precisions.
template <typename S>
class AdamW {
 public:
  explicit AdamW(double weight_decay) : wd_(weight_decay) {}

  void step(ParamStore<S>& ps, double lr) {
    // scan before mutating anything, so an abort leaves the weights at the
    // last good state
    for (const auto& [name, e] : ps.entries()) {
      for (Index i = 0; i < e.grad.numel(); ++i) {
        if (!finite_value(e.grad[i])) {
          throw NumericError("adamw: non-finite gradient in '" + name + "'");
        }
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
    for (auto& [name, e] : ps.entries()) {
      std::vector<double>& m = m_[name];
      std::vector<double>& v = v_[name];
      if (m.empty()) {
        m.assign(static_cast<std::size_t>(e.value.numel()), 0.0);
        v.assign(static_cast<std::size_t>(e.value.numel()), 0.0);
      }
      for (Index i = 0; i < e.value.numel(); ++i) {
        const double g = static_cast<double>(e.grad[i]);
        double p = static_cast<double>(e.value[i]);
        p *= 1.0 - lr * wd_;
        const std::size_t j = static_cast<std::size_t>(i);
        m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g;
        v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g * g;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        p -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
        e.value[i] = static_cast<S>(p);
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  std::map<std::string, std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
  double wd_;
};

// -------------------------------------------------------------- metrics

struct StepRecord {
  Index step = 0;
  Index epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  bool has_eval = false;
  double eval_acc = 0.0;
  std::int64_t wall_ms = 0;
};

inline std::string metrics_csv(const std::vector<StepRecord>& records) {
  std::string out = "step,epoch,lr,train_loss,train_acc,eval_acc,wall_ms\n";
  char buf[192];
  for (const StepRecord& r : records) {
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%.8g,%.6f,%.4f,",
                  static_cast<long long>(r.step),
                  static_cast<long long>(r.epoch), r.lr, r.train_loss,
                  r.train_acc);
    out += buf;
    if (r.has_eval) {
      std::snprintf(buf, sizeof(buf), "%.4f", r.eval_acc);
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), ",%lld\n",
                  static_cast<long long>(r.wall_ms));
    out += buf;
  }
  return out;
}

// ------------------------------------------------------------- batching

namespace traindetail {

template <typename S>
Tensor<S> gather_batch(const Tensor<S>& images,
                       const std::vector<Index>& order, Index start,
                       Index count, std::vector<int>* batch_labels,
                       const std::vector<int>& labels) {
  const Index per = images.numel() / images.dim(0);
  std::vector<Index> dims = images.shape().dims();
  dims[0] = count;
  Tensor<S> out{Shape(std::move(dims))};
  for (Index b = 0; b < count; ++b) {
    const Index src = order[static_cast<std::size_t>(start + b)];
    const S* from = images.data() + src * per;
    S* to = out.data() + b * per;
    for (Index i = 0; i < per; ++i) to[i] = from[i];
    if (batch_labels) {
      batch_labels->push_back(labels[static_cast<std::size_t>(src)]);
    }
  }
  return out;
}

template <typename S>
Index argmax_row(const Tensor<S>& logits, Index row) {
  const Index k = logits.dim(1);
  const S* p = logits.data() + row * k;
  Index best = 0;
  for (Index j = 1; j < k; ++j) {
    if (p[j] > p[best]) best = j;
  }
  return best;
}

template <typename S>
double batch_accuracy(const Tensor<S>& logits,
                      const std::vector<int>& labels) {
  Index correct = 0;
  for (Index n = 0; n < logits.dim(0); ++n) {
    if (argmax_row(logits, n) == labels[static_cast<std::size_t>(n)]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(logits.dim(0));
}

}  // namespace traindetail

// Random pad-4 crop plus coin-flip horizontal mirror, per sample, shared
// across the sample's channels. The pad region is zero, which for the
// standardized CIFAR encoding is the mean pixel.
template <typename S>
void augment_crop_flip(Tensor<S>& batch, Rng& rng) {
  const Index B = batch.dim(0), C = batch.dim(1);
  const Index H = batch.dim(2), W = batch.dim(3);
  std::vector<S> sample(static_cast<std::size_t>(C * H * W));
  for (Index n = 0; n < B; ++n) {
    const Index dr = static_cast<Index>(rng.below(9)) - 4;
    const Index dc = static_cast<Index>(rng.below(9)) - 4;
    const bool flip = rng.below(2) == 1;
    S* base = batch.data() + n * C * H * W;
    for (Index ch = 0; ch < C; ++ch) {
      const S* in = base + ch * H * W;
      S* out = sample.data() + ch * H * W;
      for (Index r = 0; r < H; ++r) {
        const Index sr = r + dr;
        for (Index c = 0; c < W; ++c) {
          const Index sc = (flip ? W - 1 - c : c) + dc;
          out[r * W + c] = (sr >= 0 && sr < H && sc >= 0 && sc < W)
                               ? in[sr * W + sc]
                               : S(0);
        }
      }
    }
    for (std::size_t i = 0; i < sample.size(); ++i) {
      base[i] = sample[i];
    }
  }
}

// ---------------------------------------------------------------- loops

template <typename S>
double evaluate(Model<S>& model, const Dataset<S>& ds, Index batch_size) {
  if (ds.size() == 0) throw SizeError("evaluate: empty dataset");
  std::vector<Index> order(static_cast<std::size_t>(ds.size()));
  for (Index i = 0; i < ds.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  Index correct = 0;
  for (Index start = 0; start < ds.size(); start += batch_size) {
    const Index count = std::min(batch_size, ds.size() - start);
    std::vector<int> labels;
    Tensor<S> x = traindetail::gather_batch(ds.images, order, start, count,
                                            &labels, ds.labels);
    const Tensor<S> logits = model_forward(model, x);
    for (Index n = 0; n < count; ++n) {
      if (traindetail::argmax_row(logits, n) ==
          labels[static_cast<std::size_t>(n)]) {
        ++correct;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

struct TrainResult {
  std::vector<StepRecord> records;
  bool evaluated = false;
  double final_eval_acc = 0.0;
};

// Full-batch steps only (the tail short of one batch is dropped), shuffle
// order a pure function of (seed, epoch), one evaluation at the end of each
// epoch recorded on that epoch's last step. When out_dir is set, writes
// metrics.csv and final.ckpt there; on a non-finite loss or gradient the
// weights of the last completed step go to last_good.ckpt and the abort is
// rethrown.
template <typename S>
TrainResult train_loop(Model<S>& model, const Dataset<S>& train_set,
                       const Dataset<S>& eval_set, const TrainConfig& cfg,
                       const std::string& out_dir = "") {
  validate(cfg);
  TrainResult res;
  const Index n = train_set.size();
  const Index steps_per_epoch = cfg.total_epochs > 0 ? n / cfg.batch_size : 0;
  if (cfg.total_epochs > 0 && steps_per_epoch == 0) {
    throw SizeError("train_loop: " + std::to_string(n) +
                    " samples cannot fill one batch of " +
                    std::to_string(cfg.batch_size));
  }
  const Index total_steps = steps_per_epoch * cfg.total_epochs;
  if (total_steps > 0 && cfg.warmup_steps >= total_steps) {
    throw ConfigError("train_loop: warmup_steps " +
                      std::to_string(cfg.warmup_steps) +
                      " must stay below total steps " +
                      std::to_string(total_steps));
  }

  auto flush_outputs = [&](const char* checkpoint_name) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    write_binary_file(out_dir + "/metrics.csv", metrics_csv(res.records));
    save_checkpoint(out_dir + "/" + checkpoint_name, model.store);
  };

  AdamW<S> opt(cfg.weight_decay);
  Index step = 0;
  for (Index epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    std::vector<Index> order(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng shuffle = substream(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
    for (Index i = n - 1; i > 0; --i) {
      const Index j = static_cast<Index>(shuffle.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(j)]);
    }

    for (Index b = 0; b < steps_per_epoch; ++b) {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<int> labels;
      Tensor<S> x = traindetail::gather_batch(
          train_set.images, order, b * cfg.batch_size, cfg.batch_size,
          &labels, train_set.labels);
      if (cfg.augment == Augment::crop_flip) {
        Rng ar = substream(cfg.seed, "augment",
                           static_cast<std::uint64_t>(step));
        augment_crop_flip(x, ar);
      }
      const double lr = lr_at(step, total_steps, cfg);

      Tape<S> tape(&model.store);
      Var logits = model_fragment(tape, model.cfg, tape.input(x));
      Var loss =
          softmax_cross_entropy(tape, logits, labels, cfg.label_smoothing);
      const double loss_value = static_cast<double>(tape.val(loss)[0]);
      if (!std::isfinite(loss_value)) {
        flush_outputs("last_good.ckpt");
        throw NumericError("train_loop: non-finite loss at step " +
                           std::to_string(step));
      }
      model.store.zero_grads();
      tape.backward(loss);
      try {
        opt.step(model.store, lr);
      } catch (const NumericError&) {
        flush_outputs("last_good.ckpt");
        throw;
      }

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = lr;
      rec.train_loss = loss_value;
      rec.train_acc = traindetail::batch_accuracy(tape.val(logits), labels);
      if (cfg.timing) {
        rec.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
      }
      res.records.push_back(rec);
      ++step;
    }

    if (eval_set.size() > 0) {
      res.final_eval_acc = evaluate(model, eval_set, cfg.batch_size);
      res.evaluated = true;
      res.records.back().has_eval = true;
      res.records.back().eval_acc = res.final_eval_acc;
    }
  }

  flush_outputs("final.ckpt");
  return res;
}

}  // namespace aff

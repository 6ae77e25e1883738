#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "aff/mixers.hpp"
#include "aff/network.hpp"

namespace aff {

// One timed configuration. `path` is "fft_filter" (the AFF mixer, mask
// prediction included) or "direct_conv" (circular depthwise convolution
// with the equivalent precomputed kernel).
struct BenchRow {
  Index resolution = 0;
  Index channels = 0;
  std::string path;
  Index reps = 0;
  std::int64_t median_ns = 0;
  std::int64_t flops_est = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
};

inline std::string bench_csv(const BenchReport& report) {
  std::string out = "resolution,channels,path,reps,median_ns,flops_est\n";
  char buf[160];
  for (const BenchRow& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%s,%lld,%lld,%lld\n",
                  static_cast<long long>(r.resolution),
                  static_cast<long long>(r.channels), r.path.c_str(),
                  static_cast<long long>(r.reps),
                  static_cast<long long>(r.median_ns),
                  static_cast<long long>(r.flops_est));
    out += buf;
  }
  return out;
}

// median(direct_conv) / median(fft_filter) at one resolution.
inline double bench_ratio(const BenchReport& report, Index resolution) {
  double fft = 0.0, direct = 0.0;
  for (const BenchRow& r : report.rows) {
    if (r.resolution != resolution) continue;
    if (r.path == "fft_filter") fft = static_cast<double>(r.median_ns);
    if (r.path == "direct_conv") direct = static_cast<double>(r.median_ns);
  }
  if (fft <= 0.0 || direct <= 0.0) {
    throw ConfigError("bench_ratio: no rows at resolution " +
                      std::to_string(resolution));
  }
  return direct / fft;
}

namespace benchdetail {

inline std::int64_t median_of(std::vector<std::int64_t> ns) {
  std::sort(ns.begin(), ns.end());
  const std::size_t mid = ns.size() / 2;
  return ns.size() % 2 == 1 ? ns[mid] : (ns[mid - 1] + ns[mid]) / 2;
}

template <typename F>
std::int64_t median_ns(Index reps, F&& body) {
  std::vector<std::int64_t> ns(static_cast<std::size_t>(reps));
  for (auto& sample : ns) {
    const auto t0 = std::chrono::steady_clock::now();
    body();
    const auto t1 = std::chrono::steady_clock::now();
    sample =
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
  }
  return median_of(std::move(ns));
}

}  // namespace benchdetail

// Times the frequency-domain mixer against the direct convolution it is
// equivalent to, one seeded input per resolution, single-threaded. The two
// paths must agree numerically before any timing is reported; a benchmark
// of disagreeing implementations would be meaningless.
inline BenchReport run_scaling_bench(const std::vector<Index>& resolutions,
                                     Index channels, Index reps) {
  if (reps < 5) {
    throw ConfigError("bench: reps must be >= 5, got " + std::to_string(reps));
  }
  if (resolutions.empty()) throw ConfigError("bench: no resolutions");
  for (Index r : resolutions) {
    if (!is_pow2(r)) {
      throw ConfigError("bench: resolution " + std::to_string(r) +
                        " is not a power of two");
    }
  }

  BenchReport report;
  // the sink keeps the optimizer from dropping the timed calls
  double sink = 0.0;
  for (Index res : resolutions) {
    Rng rng = substream(1, "bench", static_cast<std::uint64_t>(res));
    Tensor<float> x(Shape{1, channels, res, res});
    for (Index i = 0; i < x.numel(); ++i) {
      x[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    const auto p = make_aff_mixer_params<float>(
        channels, 8, 1000 + static_cast<std::uint64_t>(res));
    const Tensor<float> kernel = real_part(effective_kernel(x, p));

    // warm both paths once and use those runs as the agreement check
    const Tensor<float> via_fft = aff_forward(x, p);
    const Tensor<float> via_direct = circular_dwconv_oracle(x, kernel);
    const double rel = max_rel_err(via_fft, via_direct);
    if (!(rel <= 1e-4)) {
      throw NumericError("bench: paths disagree at resolution " +
                         std::to_string(res) + ", rel err " +
                         std::to_string(rel));
    }

    const std::int64_t fft_ns = benchdetail::median_ns(reps, [&] {
      sink += static_cast<double>(aff_forward(x, p)[0]);
    });
    const std::int64_t direct_ns = benchdetail::median_ns(reps, [&] {
      sink += static_cast<double>(circular_dwconv_oracle(x, kernel)[0]);
    });

    report.rows.push_back(BenchRow{res, channels, "fft_filter", reps, fft_ns,
                                   mixer_flops(MixerKind::AffFft, channels,
                                               res, res, 8)});
    report.rows.push_back(BenchRow{res, channels, "direct_conv", reps,
                                   direct_ns,
                                   direct_global_conv_flops(channels, res,
                                                            res)});
  }
  if (!finite_value(sink)) {
    throw NumericError("bench: non-finite values in timed outputs");
  }
  return report;
}

}  // namespace aff

#include <cstdio>
#include <cerrno>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aff/bench.hpp"
#include "aff/checkpoint.hpp"
#include "aff/config.hpp"
#include "aff/dataset.hpp"
#include "aff/io.hpp"
#include "aff/network.hpp"
#include "aff/train.hpp"
#include "aff/verify.hpp"

namespace {

using namespace aff;

// AFF_SEED, when set, wins over the config file and the default.
void apply_seed_env(RunConfig& rc) {
  const char* env = std::getenv("AFF_SEED");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (*end != '\0' || errno != 0) {
    throw ConfigError(std::string("AFF_SEED: cannot parse '") + env +
                      "' as an unsigned integer");
  }
  rc.train.seed = static_cast<std::uint64_t>(v);
}

RunConfig load_run_config(const std::string& config_path) {
  RunConfig rc;
  if (!config_path.empty()) rc = load_config(config_path);
  apply_seed_env(rc);
  return rc;
}

struct DataSpec {
  bool synth = false;
  std::string cifar_dir;
};

// --data is either "synth" or "cifar10:DIR".
DataSpec parse_data_arg(const std::string& arg) {
  DataSpec d;
  if (arg == "synth") {
    d.synth = true;
    return d;
  }
  const std::string prefix = "cifar10:";
  if (arg.rfind(prefix, 0) == 0 && arg.size() > prefix.size()) {
    d.cifar_dir = arg.substr(prefix.size());
    return d;
  }
  throw ConfigError("--data must be 'synth' or 'cifar10:DIR', got '" + arg +
                    "'");
}

template <typename S>
std::pair<Dataset<S>, Dataset<S>> load_splits(const DataSpec& spec,
                                              const RunConfig& rc) {
  if (spec.synth) {
    // train split on the run seed, test split on the next one
    auto train = synth_task<S>(rc.train.seed, 10000);
    auto test = synth_task<S>(rc.train.seed + 1, 2000);
    return {std::move(train.data), std::move(test.data)};
  }
  return {load_cifar10<S>(spec.cifar_dir, /*train=*/true),
          load_cifar10<S>(spec.cifar_dir, /*train=*/false)};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("cannot write '" + path + "'");
}

int run_verify(const std::string& suite, const std::string& precision) {
  const Precision prec =
      precision == "f64" ? Precision::f64 : Precision::f32;
  const auto results = run_verify_suite(suite, prec);
  for (const auto& r : results) std::puts(property_line(r).c_str());
  Index failed = 0;
  for (const auto& r : results) failed += r.pass ? 0 : 1;
  std::printf("verify %s (%s): %zu properties, %lld failed\n", suite.c_str(),
              precision.c_str(), results.size(),
              static_cast<long long>(failed));
  return failed == 0 ? 0 : 1;
}

template <typename S>
int run_train(const RunConfig& rc, const DataSpec& spec,
              const std::string& out_dir) {
  auto splits = load_splits<S>(spec, rc);
  Model<S> m = build_affnet<S>(rc.net, rc.train.seed);
  const TrainResult res =
      train_loop(m, splits.first, splits.second, rc.train, out_dir);
  if (res.evaluated) {
    std::printf("final eval accuracy: %.4f\n", res.final_eval_acc);
  }
  std::printf("wrote %s/metrics.csv and %s/final.ckpt\n", out_dir.c_str(),
              out_dir.c_str());
  return 0;
}

template <typename S>
int run_eval(const RunConfig& rc, const DataSpec& spec,
             const std::string& ckpt_path) {
  auto splits = load_splits<S>(spec, rc);
  Model<S> m = build_affnet<S>(rc.net, rc.train.seed);
  load_checkpoint(ckpt_path, m.store);
  const double acc = evaluate(m, splits.second, rc.train.batch_size);
  std::printf("eval accuracy: %.4f\n", acc);
  return 0;
}

template <typename S>
int run_inspect(const RunConfig& rc, const std::string& ckpt_path,
                const std::string& input_path, const std::string& out_dir) {
  Model<S> m = build_affnet<S>(rc.net, rc.train.seed);
  load_checkpoint(ckpt_path, m.store);

  // grayscale PGM replicated to the three input channels
  const Tensor<double> gray = read_pgm(input_path);
  const Index r = rc.net.input_resolution;
  if (gray.dim(0) != r || gray.dim(1) != r) {
    throw FormatError("inspect: '" + input_path + "' is " + gray.shape().str() +
                      ", the model takes " + std::to_string(r) + "x" +
                      std::to_string(r));
  }
  Tensor<S> images(Shape{1, 3, r, r});
  for (Index c = 0; c < 3; ++c) {
    for (Index i = 0; i < r * r; ++i) {
      images[c * r * r + i] = static_cast<S>(gray[i]);
    }
  }

  const auto kernels = real_part(first_block_kernels(m, images));
  const Index C = kernels.dim(1), H = kernels.dim(2), W = kernels.dim(3);
  std::filesystem::create_directories(out_dir);
  for (Index c = 0; c < C; ++c) {
    Tensor<double> plane(Shape{H, W});
    for (Index i = 0; i < H * W; ++i) {
      plane[i] = static_cast<double>(kernels[c * H * W + i]);
    }
    char name[64];
    std::snprintf(name, sizeof(name), "kernel_c%03lld.pgm",
                  static_cast<long long>(c));
    write_pgm(out_dir + "/" + std::string(name), plane);
  }
  std::printf("wrote %lld kernel images of %lldx%lld to %s\n",
              static_cast<long long>(C), static_cast<long long>(H),
              static_cast<long long>(W), out_dir.c_str());
  return 0;
}

int run_bench(const std::string& out_path, Index reps) {
  const BenchReport report =
      run_scaling_bench({8, 16, 32, 64, 128}, 32, reps);
  const std::string csv = bench_csv(report);
  write_text(out_path, csv);
  fputs(csv.c_str(), stdout);
  for (Index r : {Index{16}, Index{128}}) {
    std::printf("direct/fft ratio at %lld: %.2f\n", static_cast<long long>(r),
                bench_ratio(report, r));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive frequency filtering: verification, training and "
               "benchmarks"};
  app.require_subcommand(1);

  int threads = 1;
  app.add_option("--threads", threads, "Worker threads (determinism needs 1)")
      ->check(CLI::PositiveNumber);

  auto* verify = app.add_subcommand("verify", "Run the invariant suites");
  std::string suite = "all";
  std::string precision = "f64";
  verify->add_option("--suite", suite, "Which suite to run")
      ->check(CLI::IsMember(
          {"fft", "gradcheck", "equivalence", "properties", "all"}));
  verify->add_option("--precision", precision, "Scalar type under test")
      ->check(CLI::IsMember({"f32", "f64"}));

  auto* train = app.add_subcommand("train", "Train a model, write metrics "
                                            "and a checkpoint");
  std::string config_path, data_arg, out_dir;
  train->add_option("--config", config_path, "key=value config file");
  train->add_option("--data", data_arg, "'synth' or 'cifar10:DIR'")
      ->required();
  train->add_option("--out", out_dir, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ckpt_path;
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval->add_option("--data", data_arg, "'synth' or 'cifar10:DIR'")->required();
  eval->add_option("--config", config_path, "key=value config file");

  auto* bench = app.add_subcommand("bench", "Scaling benchmark, FFT filter "
                                            "vs direct convolution");
  std::string bench_out;
  long long reps = 5;
  bench->add_option("--out", bench_out, "CSV output path")->required();
  bench->add_option("--reps", reps, "Timed repetitions per row (>= 5)");

  auto* inspect = app.add_subcommand("inspect", "Export the first block's "
                                                "per-channel kernels as PGM");
  std::string input_path;
  inspect->add_option("--checkpoint", ckpt_path, "Checkpoint file")
      ->required();
  inspect->add_option("--input", input_path, "Input image, binary PGM (P5)")
      ->required();
  inspect->add_option("--out", out_dir, "Output directory")->required();
  inspect->add_option("--config", config_path, "key=value config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (threads > 1) {
    std::printf("note: %d threads requested; running single-threaded for "
                "bitwise determinism\n",
                threads);
  }

  try {
    if (app.got_subcommand(verify)) return run_verify(suite, precision);
    const RunConfig rc = load_run_config(config_path);
    if (app.got_subcommand(train)) {
      const DataSpec spec = parse_data_arg(data_arg);
      return rc.train.precision == "f64"
                 ? run_train<double>(rc, spec, out_dir)
                 : run_train<float>(rc, spec, out_dir);
    }
    if (app.got_subcommand(eval)) {
      const DataSpec spec = parse_data_arg(data_arg);
      return rc.train.precision == "f64" ? run_eval<double>(rc, spec, ckpt_path)
                                         : run_eval<float>(rc, spec, ckpt_path);
    }
    if (app.got_subcommand(bench)) {
      return run_bench(bench_out, static_cast<Index>(reps));
    }
    if (app.got_subcommand(inspect)) {
      return rc.train.precision == "f64"
                 ? run_inspect<double>(rc, ckpt_path, input_path, out_dir)
                 : run_inspect<float>(rc, ckpt_path, input_path, out_dir);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "aff/error.hpp"
#include "aff/rng.hpp"
#include "aff/tensor.hpp"

namespace aff {

// In-memory labeled image set, images [N, C, H, W].
template <typename S>
struct Dataset {
  Tensor<S> images;
  std::vector<int> labels;
  Index num_classes = 0;

  Index size() const { return static_cast<Index>(labels.size()); }
};

// ------------------------------------------------------- synthetic task

// Marker top-left corners, kept alongside the images so tests can re-derive
// every label from coordinates alone, independent of the generator.
struct SynthMarkers {
  Index r1 = 0, c1 = 0, r2 = 0, c2 = 0;
};

template <typename S>
struct SynthSet {
  Dataset<S> data;
  std::vector<SynthMarkers> markers;
};

// Two bright 2x2 markers on a dark 32x32 field, replicated to 3 channels.
// The separation axis is the one with the larger coordinate gap (ties fall
// to horizontal); label 1 iff both markers sit in the same image half along
// that axis, judged by their top-left corners (<= 15 is the low half).
// Relating positions up to 30 pixels apart is far beyond any 3x3 receptive
// field, which is what makes this a global token-mixing probe.
template <typename S>
SynthSet<S> synth_task(std::uint64_t seed, Index n) {
  constexpr Index R = 32;
  SynthSet<S> out;
  out.data.images = Tensor<S>(Shape{n, 3, R, R});
  out.data.labels.resize(static_cast<std::size_t>(n));
  out.data.num_classes = 2;
  out.markers.resize(static_cast<std::size_t>(n));
  Rng rng = substream(seed, "synth");
  // unconstrained draws land same-half markers well under half the time, so a
  // per-class quota rejects surplus samples and keeps the set at chance parity
  Index quota[2] = {n - n / 2, n / 2};
  for (Index i = 0; i < n; ++i) {
    Index r1 = 0, c1 = 0, r2 = 0, c2 = 0;
    int label = 0;
    for (;;) {
      // top-left corners in [0,30] so the 2x2 marker stays in frame; redraw
      // the second marker until the two do not share any cell
      r1 = static_cast<Index>(rng.below(31));
      c1 = static_cast<Index>(rng.below(31));
      do {
        r2 = static_cast<Index>(rng.below(31));
        c2 = static_cast<Index>(rng.below(31));
      } while (std::abs(r1 - r2) < 2 && std::abs(c1 - c2) < 2);

      const Index dy = std::abs(r1 - r2), dx = std::abs(c1 - c2);
      const bool vertical = dy > dx;
      const Index a1 = vertical ? r1 : c1;
      const Index a2 = vertical ? r2 : c2;
      label = ((a1 <= 15) == (a2 <= 15)) ? 1 : 0;
      if (quota[label] > 0) break;
    }
    --quota[label];
    out.markers[static_cast<std::size_t>(i)] = SynthMarkers{r1, c1, r2, c2};
    out.data.labels[static_cast<std::size_t>(i)] = label;

    S* base = out.data.images.data() + i * 3 * R * R;
    for (Index ch = 0; ch < 3; ++ch) {
      S* plane = base + ch * R * R;
      for (Index dr = 0; dr < 2; ++dr) {
        for (Index dc = 0; dc < 2; ++dc) {
          plane[(r1 + dr) * R + (c1 + dc)] = S(1);
          plane[(r2 + dr) * R + (c2 + dc)] = S(1);
        }
      }
    }
  }
  return out;
}

// ------------------------------------------------------------- CIFAR-10

// Per-channel statistics of the full training set, applied after scaling
// pixel bytes to [0,1].
inline constexpr double kCifarMean[3] = {0.4914, 0.4822, 0.4465};
inline constexpr double kCifarStd[3] = {0.2470, 0.2435, 0.2616};

namespace datadetail {

// One binary batch file: records of 3073 bytes, a label byte 0..9 followed
// by 3072 pixel bytes (planes R,G,B, each 32x32 row-major). Appends at most
// `want` records (all of them when want < 0).
template <typename S>
Index append_cifar_file(const std::string& path, Index want,
                        std::vector<S>& pixels, std::vector<int>& labels) {
  constexpr Index kRecord = 3073;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read from '" + path + "' failed");
  if (buf.size() % kRecord != 0) {
    throw FormatError("cifar10 " + path + ": size " +
                      std::to_string(buf.size()) +
                      " is not a multiple of the 3073-byte record");
  }
  const Index available = static_cast<Index>(buf.size()) / kRecord;
  const Index take = want < 0 ? available : std::min(want, available);
  const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data());
  for (Index rec = 0; rec < take; ++rec) {
    const unsigned char* r = p + rec * kRecord;
    if (r[0] > 9) {
      throw FormatError("cifar10 " + path + ": record " + std::to_string(rec) +
                        " has label " + std::to_string(int(r[0])));
    }
    labels.push_back(static_cast<int>(r[0]));
    for (Index ch = 0; ch < 3; ++ch) {
      const unsigned char* plane = r + 1 + ch * 1024;
      for (Index i = 0; i < 1024; ++i) {
        const double unit = static_cast<double>(plane[i]) / 255.0;
        pixels.push_back(
            static_cast<S>((unit - kCifarMean[ch]) / kCifarStd[ch]));
      }
    }
  }
  return take;
}

}  // namespace datadetail

// Loads the standard binary batches from dir: data_batch_1..5.bin for the
// training split, test_batch.bin for the test split, stopping once `limit`
// records are in hand (limit < 0 reads everything). Files are only opened
// while records are still needed, so a truncated desk-scale mirror holding
// just data_batch_1.bin serves a 5000-image subset.
template <typename S>
Dataset<S> load_cifar10(const std::string& dir, bool train, Index limit = -1) {
  std::vector<std::string> files;
  if (train) {
    for (int i = 1; i <= 5; ++i) {
      files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
    }
  } else {
    files.push_back(dir + "/test_batch.bin");
  }
  std::vector<S> pixels;
  std::vector<int> labels;
  Index have = 0;
  for (const std::string& f : files) {
    if (limit >= 0 && have >= limit) break;
    const Index want = limit < 0 ? Index{-1} : limit - have;
    have += datadetail::append_cifar_file(f, want, pixels, labels);
  }
  if (limit > 0 && have < limit) {
    throw SizeError("cifar10 " + dir + ": requested " + std::to_string(limit) +
                    " records, found " + std::to_string(have));
  }
  Dataset<S> out;
  out.images = Tensor<S>(Shape{have, 3, 32, 32}, std::move(pixels));
  out.labels = std::move(labels);
  out.num_classes = 10;
  return out;
}

}  // namespace aff

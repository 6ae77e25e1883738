#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <string>

#include "aff/error.hpp"
#include "aff/tensor.hpp"

namespace aff {

inline std::string read_binary_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read from '" + path + "' failed");
  return buf;
}

inline void write_binary_file(const std::string& path,
                              const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  if (!f) throw IoError("write to '" + path + "' failed");
}

namespace iodetail {

// whitespace-separated PGM header tokens; '#' starts a comment to end of line
inline std::string pgm_token(const std::string& buf, std::size_t& pos,
                             const std::string& path) {
  while (pos < buf.size()) {
    const char c = buf[pos];
    if (c == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < buf.size() &&
         !std::isspace(static_cast<unsigned char>(buf[pos])) &&
         buf[pos] != '#') {
    ++pos;
  }
  if (start == pos) throw FormatError("pgm " + path + ": truncated header");
  return buf.substr(start, pos - start);
}

inline Index pgm_int(const std::string& buf, std::size_t& pos,
                     const std::string& path) {
  const std::string tok = pgm_token(buf, pos, path);
  Index v = 0;
  for (char c : tok) {
    if (c < '0' || c > '9') {
      throw FormatError("pgm " + path + ": expected integer, got '" + tok +
                        "'");
    }
    v = v * 10 + (c - '0');
  }
  return v;
}

}  // namespace iodetail

// Binary 8-bit grayscale (P5), returned as [H,W] values in [0,1].
inline Tensor<double> read_pgm(const std::string& path) {
  const std::string buf = read_binary_file(path);
  std::size_t pos = 0;
  if (iodetail::pgm_token(buf, pos, path) != "P5") {
    throw FormatError("pgm " + path + ": not a binary P5 file");
  }
  const Index w = iodetail::pgm_int(buf, pos, path);
  const Index h = iodetail::pgm_int(buf, pos, path);
  const Index maxval = iodetail::pgm_int(buf, pos, path);
  if (w < 1 || h < 1) {
    throw FormatError("pgm " + path + ": bad dimensions " + std::to_string(w) +
                      "x" + std::to_string(h));
  }
  if (maxval < 1 || maxval > 255) {
    throw FormatError("pgm " + path + ": unsupported maxval " +
                      std::to_string(maxval));
  }
  ++pos;  // single whitespace byte after the header
  if (buf.size() - pos < static_cast<std::size_t>(w * h)) {
    throw FormatError("pgm " + path + ": pixel data truncated");
  }
  Tensor<double> img(Shape{h, w});
  for (Index i = 0; i < h * w; ++i) {
    img[i] = static_cast<double>(static_cast<unsigned char>(buf[pos + i])) /
             static_cast<double>(maxval);
  }
  return img;
}

// Writes [H,W] data min-max normalized onto the 0..255 range, so kernel
// exports stay visible whatever their natural scale. A constant image maps
// to all zeros.
template <typename S>
void write_pgm(const std::string& path, const Tensor<S>& img) {
  if (img.rank() != 2) {
    throw RankError("write_pgm: expected [H,W], got " + img.shape().str());
  }
  const Index h = img.dim(0), w = img.dim(1);
  double lo = static_cast<double>(img[0]), hi = lo;
  for (Index i = 0; i < img.numel(); ++i) {
    const double v = static_cast<double>(img[i]);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  std::string out =
      "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (Index i = 0; i < img.numel(); ++i) {
    const double v = static_cast<double>(img[i]);
    const double unit = span > 0.0 ? (v - lo) / span : 0.0;
    out.push_back(static_cast<char>(
        static_cast<unsigned char>(unit * 255.0 + 0.5)));
  }
  write_binary_file(path, out);
}

}  // namespace aff

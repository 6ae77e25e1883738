#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>

#include "aff/autodiff.hpp"

namespace aff {

// Weight file layout, all integers little-endian:
//   magic "AFFW" | version u16 | entry count u32 | entries...
// entry: name length u16 | name bytes | rank u8 | dims u32 each | f32 data
// Entries are written in sorted name order, so the bytes are a pure function
// of the parameter values.
inline constexpr std::uint16_t kCheckpointVersion = 1;

namespace ckptdetail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(out, u);
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path)
      : buf_(buf), path_(path) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() {
    const char* p = take(2);
    return static_cast<std::uint16_t>(static_cast<unsigned char>(p[0]) |
                                      (static_cast<unsigned char>(p[1]) << 8));
  }
  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i]))
           << (8 * i);
    }
    return v;
  }
  float f32() {
    const std::uint32_t u = u32();
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
  std::string bytes(std::size_t n) { return std::string(take(n), n); }
  bool done() const { return pos_ == buf_.size(); }

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError("checkpoint " + path_ + ": " + msg);
  }

 private:
  const char* take(std::size_t n) {
    if (buf_.size() - pos_ < n) fail("file truncated");
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }

  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace ckptdetail

template <typename S>
void save_checkpoint(const std::string& path, const ParamStore<S>& ps) {
  std::string out;
  out += "AFFW";
  ckptdetail::put_u16(out, kCheckpointVersion);
  ckptdetail::put_u32(out, static_cast<std::uint32_t>(ps.entries().size()));
  for (const auto& [name, e] : ps.entries()) {
    ckptdetail::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(e.value.rank()));
    for (Index a = 0; a < e.value.rank(); ++a) {
      ckptdetail::put_u32(out, static_cast<std::uint32_t>(e.value.dim(a)));
    }
    for (Index i = 0; i < e.value.numel(); ++i) {
      ckptdetail::put_f32(out, static_cast<float>(e.value[i]));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  f.flush();
  if (!f) throw IoError("write to '" + path + "' failed");
}

// Loads into an existing store: every file entry must name a live parameter
// of the same shape, every live parameter must be covered, and no bytes may
// be left over. Values arrive as f32 and are widened to S.
template <typename S>
void load_checkpoint(const std::string& path, ParamStore<S>& ps) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for reading");
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read from '" + path + "' failed");

  ckptdetail::Reader r(buf, path);
  if (r.bytes(4) != "AFFW") r.fail("bad magic");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  if (count != ps.entries().size()) {
    r.fail("holds " + std::to_string(count) + " tensors, model has " +
           std::to_string(ps.entries().size()));
  }
  std::set<std::string> loaded;
  std::uint32_t seen = 0;
  while (seen < count) {
    const std::string name = r.bytes(r.u16());
    if (!ps.has(name)) r.fail("unknown tensor '" + name + "'");
    if (!loaded.insert(name).second) {
      r.fail("duplicate tensor '" + name + "'");
    }
    Tensor<S>& value = ps.value(name);
    const std::uint8_t rank = r.u8();
    if (rank != value.rank()) {
      r.fail("tensor '" + name + "' has rank " + std::to_string(rank) +
             ", model expects " + value.shape().str());
    }
    for (Index a = 0; a < value.rank(); ++a) {
      const std::uint32_t d = r.u32();
      if (static_cast<Index>(d) != value.dim(a)) {
        r.fail("tensor '" + name + "' dim " + std::to_string(a) + " is " +
               std::to_string(d) + ", model expects " + value.shape().str());
      }
    }
    for (Index i = 0; i < value.numel(); ++i) {
      value[i] = static_cast<S>(r.f32());
    }
    ++seen;
  }
  if (!r.done()) r.fail("trailing bytes after last tensor");
}

}  // namespace aff

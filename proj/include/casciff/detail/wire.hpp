#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "casciff/errors.hpp"
#include "casciff/tensor.hpp"

// Little-endian binary encoding shared by the checkpoint and cache formats.
namespace casciff::wire {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t v;
  std::memcpy(&v, &d, 8);
  put_u64(os, v);
}

inline void put_str(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void put_tensor(std::ostream& os, const Tensor& t) {
  put_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.shape()) put_u64(os, d);
  for (std::size_t i = 0; i < t.size(); ++i) put_f64(os, t[i]);
}

struct Reader {
  std::ifstream in;
  std::string path;
  std::string kind;

  Reader(const std::string& p, std::string k) : in(p, std::ios::binary), path(p), kind(std::move(k)) {
    if (!in) throw IoError("cannot open " + kind + " '" + p + "'");
  }

  void bytes(void* dst, std::size_t n) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw IoError("truncated " + kind + " '" + path + "'");
  }

  std::uint32_t u32() {
    unsigned char b[4];
    bytes(b, 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::uint64_t u64() {
    unsigned char b[8];
    bytes(b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  double f64() {
    const std::uint64_t v = u64();
    double d;
    std::memcpy(&d, &v, 8);
    return d;
  }

  std::string str() {
    const std::uint64_t n = u64();
    if (n > (1ULL << 30)) throw IoError("corrupt string length in '" + path + "'");
    std::string s(n, '\0');
    if (n) bytes(s.data(), n);
    return s;
  }

  Tensor tensor() {
    const std::uint32_t nd = u32();
    if (nd < 1 || nd > 2) throw IoError("corrupt tensor rank in '" + path + "'");
    std::vector<std::size_t> shape;
    for (std::uint32_t i = 0; i < nd; ++i) {
      const std::uint64_t d = u64();
      if (d > (1ULL << 28)) throw IoError("corrupt tensor dim in '" + path + "'");
      shape.push_back(static_cast<std::size_t>(d));
    }
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = f64();
    return t;
  }
};

}  // namespace casciff::wire

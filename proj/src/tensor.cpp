#include "finr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace finr {

namespace {

void check_mm(const DenseTensor& a, const DenseTensor& b, std::size_t ac, std::size_t bc,
              const char* what) {
  if (a.order() != 2 || b.order() != 2) throw ShapeError(std::string(what) + ": operands must be matrices");
  if (ac != bc)
    throw ShapeError(std::string(what) + ": inner extents disagree (" + std::to_string(ac) + " vs " +
                     std::to_string(bc) + ")");
}

}  // namespace

DenseTensor matmul(const DenseTensor& a, const DenseTensor& b) {
  check_mm(a, b, a.extent(1), b.extent(0), "matmul");
  DenseTensor c({a.extent(0), b.extent(1)});
  matmul_acc(c, a, b);
  return c;
}

void matmul_acc(DenseTensor& c, const DenseTensor& a, const DenseTensor& b, real alpha) {
  check_mm(a, b, a.extent(1), b.extent(0), "matmul");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (c.order() != 2 || c.extent(0) != m || c.extent(1) != n)
    throw ShapeError("matmul: bad accumulator shape");
  const real* pa = a.data();
  const real* pb = b.data();
  real* pc = c.data();
#pragma omp parallel for if (m * n * k > 1u << 16)
  for (std::size_t i = 0; i < m; ++i) {
    real* crow = pc + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const real av = alpha * pa[i * k + l];
      if (av == 0) continue;
      const real* brow = pb + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

DenseTensor matmul_nt(const DenseTensor& a, const DenseTensor& b) {
  check_mm(a, b, a.extent(1), b.extent(1), "matmul_nt");
  DenseTensor c({a.extent(0), b.extent(0)});
  matmul_nt_acc(c, a, b);
  return c;
}

void matmul_nt_acc(DenseTensor& c, const DenseTensor& a, const DenseTensor& b, real alpha) {
  check_mm(a, b, a.extent(1), b.extent(1), "matmul_nt");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  if (c.order() != 2 || c.extent(0) != m || c.extent(1) != n)
    throw ShapeError("matmul_nt: bad accumulator shape");
  const real* pa = a.data();
  const real* pb = b.data();
  real* pc = c.data();
#pragma omp parallel for if (m * n * k > 1u << 16)
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      real s = 0;
      const real* ar = pa + i * k;
      const real* br = pb + j * k;
      for (std::size_t l = 0; l < k; ++l) s += ar[l] * br[l];
      pc[i * n + j] += alpha * s;
    }
  }
}

DenseTensor matmul_tn(const DenseTensor& a, const DenseTensor& b) {
  check_mm(a, b, a.extent(0), b.extent(0), "matmul_tn");
  DenseTensor c({a.extent(1), b.extent(1)});
  matmul_tn_acc(c, a, b);
  return c;
}

void matmul_tn_acc(DenseTensor& c, const DenseTensor& a, const DenseTensor& b, real alpha) {
  check_mm(a, b, a.extent(0), b.extent(0), "matmul_tn");
  const std::size_t k = a.extent(0), m = a.extent(1), n = b.extent(1);
  if (c.order() != 2 || c.extent(0) != m || c.extent(1) != n)
    throw ShapeError("matmul_tn: bad accumulator shape");
  const real* pa = a.data();
  const real* pb = b.data();
  real* pc = c.data();
#pragma omp parallel for if (m * n * k > 1u << 16)
  for (std::size_t i = 0; i < m; ++i) {
    real* crow = pc + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const real av = alpha * pa[l * m + i];
      if (av == 0) continue;
      const real* brow = pb + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

real max_abs_diff(const DenseTensor& a, const DenseTensor& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
  real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

namespace {

constexpr char kMagic[4] = {'F', 'T', 'N', 'R'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t take_u64(std::istream& is, std::size_t& off) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw IoError("tensor container truncated at byte " + std::to_string(off));
  off += 8;
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void write_tensor(std::ostream& os, const DenseTensor& t, bool as_f32) {
  if (t.empty()) throw ShapeError("cannot serialize an empty tensor");
  os.write(kMagic, 4);
  put_u16(os, kVersion);
  os.put(as_f32 ? '\x00' : '\x01');
  os.put(static_cast<char>(t.order()));
  for (std::size_t e : t.extents()) put_u64(os, e);
  if (as_f32) {
    std::vector<float> buf(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t[i]);
    static_assert(sizeof(float) == 4);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * 4));
  } else {
    static_assert(sizeof(real) == 8);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
  }
  if (!os) throw IoError("tensor write failed");
}

DenseTensor read_tensor(std::istream& is) {
  std::size_t off = 0;
  char magic[4];
  if (!is.read(magic, 4)) throw IoError("tensor container truncated at byte 0");
  off = 4;
  if (std::memcmp(magic, kMagic, 4) != 0) throw IoError("bad tensor container magic");
  unsigned char hdr[4];
  if (!is.read(reinterpret_cast<char*>(hdr), 4))
    throw IoError("tensor container truncated at byte " + std::to_string(off));
  off += 4;
  const std::uint16_t version = static_cast<std::uint16_t>(hdr[0] | (hdr[1] << 8));
  if (version != kVersion)
    throw IoError("unsupported tensor container version " + std::to_string(version));
  const int dtype = hdr[2];
  if (dtype != 0 && dtype != 1) throw IoError("unsupported tensor dtype tag " + std::to_string(dtype));
  const int order = hdr[3];
  if (order < 1 || order > kMaxModes)
    throw IoError("tensor mode count out of range: " + std::to_string(order));
  std::vector<std::size_t> extents(static_cast<std::size_t>(order));
  std::size_t total = 1;
  for (auto& e : extents) {
    const std::uint64_t v = take_u64(is, off);
    if (v == 0 || v > (1ull << 40)) throw IoError("tensor extent out of range");
    e = static_cast<std::size_t>(v);
    total *= e;
  }
  DenseTensor t(extents);
  if (dtype == 0) {
    std::vector<float> buf(total);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(total * 4)))
      throw IoError("tensor payload truncated at byte " + std::to_string(off));
    for (std::size_t i = 0; i < total; ++i) t[i] = static_cast<real>(buf[i]);
  } else {
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(total * 8)))
      throw IoError("tensor payload truncated at byte " + std::to_string(off));
  }
  return t;
}

void save_tensor(const std::string& path, const DenseTensor& t, bool as_f32) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  write_tensor(os, t, as_f32);
}

DenseTensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  return read_tensor(is);
}

}  // namespace finr

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "finr/errors.hpp"

namespace finr {

// All internal computation is double precision; the tensor container on disk
// additionally supports f32 payloads for compact exports.
using real = double;

constexpr int kMaxModes = 6;

// Dense row-major tensor with 1..6 modes. The last mode has stride 1.
class DenseTensor {
 public:
  DenseTensor() = default;

  explicit DenseTensor(std::vector<std::size_t> extents) { reshape(std::move(extents)); }

  static DenseTensor from_data(std::vector<std::size_t> extents, std::vector<real> data) {
    DenseTensor t(std::move(extents));
    if (data.size() != t.size()) throw ShapeError("from_data: payload size does not match extents");
    t.data_ = std::move(data);
    return t;
  }

  static DenseTensor full(std::vector<std::size_t> extents, real v) {
    DenseTensor t(std::move(extents));
    t.fill(v);
    return t;
  }

  void reshape(std::vector<std::size_t> extents) {
    if (extents.empty() || extents.size() > kMaxModes)
      throw ShapeError("tensor must have 1..6 modes, got " + std::to_string(extents.size()));
    std::size_t n = 1;
    for (std::size_t e : extents) {
      if (e == 0) throw ShapeError("tensor extents must be positive");
      n *= e;
    }
    extents_ = std::move(extents);
    data_.assign(n, real(0));
  }

  // Reinterpret the same row-major payload under new extents (count must match).
  void relabel(std::vector<std::size_t> extents) {
    if (extents.empty() || extents.size() > kMaxModes)
      throw ShapeError("tensor must have 1..6 modes, got " + std::to_string(extents.size()));
    std::size_t n = 1;
    for (std::size_t e : extents) {
      if (e == 0) throw ShapeError("tensor extents must be positive");
      n *= e;
    }
    if (n != data_.size())
      throw ShapeError("relabel changes element count: " + std::to_string(data_.size()) +
                       " -> " + std::to_string(n));
    extents_ = std::move(extents);
  }

  bool empty() const { return extents_.empty(); }
  int order() const { return static_cast<int>(extents_.size()); }
  const std::vector<std::size_t>& extents() const { return extents_; }
  std::size_t extent(int k) const { return extents_.at(static_cast<std::size_t>(k)); }
  std::size_t size() const { return data_.size(); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(extents_.size(), 1);
    for (int k = static_cast<int>(extents_.size()) - 2; k >= 0; --k)
      s[k] = s[k + 1] * extents_[k + 1];
    return s;
  }

  template <class... Ix>
  real& at(Ix... ix) {
    return data_[offset_of(ix...)];
  }
  template <class... Ix>
  real at(Ix... ix) const {
    return data_[offset_of(ix...)];
  }

  void fill(real v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const DenseTensor& o) const { return extents_ == o.extents_; }

  std::vector<real>& vec() { return data_; }
  const std::vector<real>& vec() const { return data_; }

 private:
  template <class... Ix>
  std::size_t offset_of(Ix... ix) const {
    constexpr std::size_t n = sizeof...(Ix);
    if (n != extents_.size()) throw ShapeError("index arity does not match tensor order");
    const std::size_t idx[n] = {static_cast<std::size_t>(ix)...};
    std::size_t off = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (idx[k] >= extents_[k]) throw ShapeError("index out of range on mode " + std::to_string(k));
      off = off * extents_[k] + idx[k];
    }
    return off;
  }

  std::vector<std::size_t> extents_;
  std::vector<real> data_;
};

// C = A(m,k) * B(k,n), plain row-major matrix product.
DenseTensor matmul(const DenseTensor& a, const DenseTensor& b);
// C += alpha * A(m,k) * B(k,n) into an existing (m,n) tensor.
void matmul_acc(DenseTensor& c, const DenseTensor& a, const DenseTensor& b, real alpha = 1);
// C = A(m,k) * B(n,k)^T and C = A(k,m)^T * B(k,n), used by backward passes.
DenseTensor matmul_nt(const DenseTensor& a, const DenseTensor& b);
DenseTensor matmul_tn(const DenseTensor& a, const DenseTensor& b);
void matmul_nt_acc(DenseTensor& c, const DenseTensor& a, const DenseTensor& b, real alpha = 1);
void matmul_tn_acc(DenseTensor& c, const DenseTensor& a, const DenseTensor& b, real alpha = 1);

real max_abs_diff(const DenseTensor& a, const DenseTensor& b);

// Tensor container: magic "FTNR", version u16, dtype u8 (0 = f32, 1 = f64),
// mode count u8, extents as u64, payload. Everything little-endian.
void write_tensor(std::ostream& os, const DenseTensor& t, bool as_f32 = false);
DenseTensor read_tensor(std::istream& is);
void save_tensor(const std::string& path, const DenseTensor& t, bool as_f32 = false);
DenseTensor load_tensor(const std::string& path);

}  // namespace finr

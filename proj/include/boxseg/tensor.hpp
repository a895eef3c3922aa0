#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace boxseg {

using Shape = std::vector<std::size_t>;

// Cache-line aligned storage. Eigen picks its vectorized head/tail split from
// the buffer address, so unaligned buffers make float rounding vary run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator&) { return true; }
};
using Buffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& dims);
std::string shape_string(const Shape& dims);

// Dense row-major tensor of 64-bit reals.
//
// Feature maps are C x H x W; batches prepend a count axis (N x C x H x W).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims, double fill = 0.0);
  Tensor(Shape dims, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, v); }
  static Tensor from(std::initializer_list<double> values);

  const Shape& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Element access for rank-3 (c, y, x) tensors.
  double& at(std::size_t c, std::size_t y, std::size_t x);
  double at(std::size_t c, std::size_t y, std::size_t x) const;

  // Same data, new dims; total size must match.
  Tensor reshaped(Shape dims) const;
  void fill(double v);
  // Both dims and payload equal bit-for-bit.
  bool identical(const Tensor& other) const;
  bool all_finite() const;

 private:
  Shape dims_;
  Buffer data_;
};

// Views a rank-3 (C,H,W) or rank-4 (N,C,H,W) tensor as four batch axes.
struct Nchw {
  std::size_t n = 1, c = 1, h = 1, w = 1;
  std::size_t plane() const { return h * w; }
  std::size_t image() const { return c * h * w; }
};
Nchw as_nchw(const Shape& dims, const char* op);

// Images / logits of a batch: slices and stacks along the leading axis.
Tensor stack(const std::vector<const Tensor*>& items);
Tensor batch_item(const Tensor& batch, std::size_t index);

}  // namespace boxseg

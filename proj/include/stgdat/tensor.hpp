#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <string>
#include <vector>

namespace stgdat {

class Rng;

// Fixed 64-byte-aligned allocation for numeric buffers. SIMD reductions
// split their accumulation at the first aligned element, so reproducibility
// down to the last bit requires every buffer to sit at the same alignment
// phase on every run; pinning the phase to zero guarantees that.
template <typename T>
struct AlignedAllocator {
  static constexpr std::size_t kAlign = 64;
  using value_type = T;

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    if (n == 0) return nullptr;
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(kAlign)));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    ::operator delete(p, n * sizeof(T), std::align_val_t(kAlign));
  }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAllocator<U>&) const noexcept {
    return false;
  }
};

using DoubleBuffer = std::vector<double, AlignedAllocator<double>>;

// Dense row-major tensor of doubles. Rank is arbitrary but almost everything
// in the library is rank 2 (rows x cols); rank 4 appears only as NHWC
// convolution inputs/kernels. Kept deliberately plain -- Eigen maps are used
// at the point of heavy arithmetic instead of baking Eigen into the type.
struct Tensor {
  std::vector<int> shape;
  DoubleBuffer data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s);
  Tensor(std::initializer_list<int> s) : Tensor(std::vector<int>(s)) {}

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v);
  static Tensor scalar(double v);
  static Tensor row(const std::vector<double>& values);
  static Tensor uniform(std::vector<int> s, double lo, double hi, Rng& rng);
  static Tensor normal(std::vector<int> s, double mean, double stddev, Rng& rng);

  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int size() const { return static_cast<int>(data.size()); }

  // Rank-2 accessors (a rank-1 tensor of length n is treated as 1 x n).
  int rows() const;
  int cols() const;
  double& operator()(int r, int c);
  double operator()(int r, int c) const;
  double& operator[](int i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return data[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
  std::string shape_str() const;  // e.g. "(3, 4)"
};

}  // namespace stgdat

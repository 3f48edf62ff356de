#pragma once

// Dense float tensors in row-major (N, C, H, W) layout.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "nowcast/error.hpp"

namespace nowcast::nn {

using Shape = std::vector<int>;

/// 64-byte aligned storage. Vectorised reductions peel according to pointer alignment, so a fixed
/// alignment keeps summation order, and hence results, identical from run to run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) { return true; }
};

using Buffer = std::vector<float, AlignedAllocator<float>>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct Tensor {
  Shape shape;
  Buffer data;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f) : shape(std::move(s)), data(numel(shape), fill) {
    for (int d : shape) detail::require(d >= 0, "negative tensor dimension");
  }
  Tensor(Shape s, Buffer values) : shape(std::move(s)), data(std::move(values)) {
    detail::require(data.size() == numel(shape), "tensor data does not match shape " + to_string(shape));
  }
  Tensor(Shape s, const std::vector<float>& values) : shape(std::move(s)), data(values.begin(), values.end()) {
    detail::require(data.size() == numel(shape), "tensor data does not match shape " + to_string(shape));
  }

  std::vector<float> to_vector() const { return {data.begin(), data.end()}; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  float& at4(int n, int c, int h, int w) {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  float at4(int n, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  void fill(float v) { std::fill(data.begin(), data.end(), v); }

  Tensor reshaped(Shape s) const {
    detail::require(numel(s) == data.size(),
                     "cannot reshape " + to_string(shape) + " to " + to_string(s));
    return Tensor(std::move(s), data);
  }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
  }

  double sum_squares() const {
    double s = 0.0;
    for (float v : data) s += static_cast<double>(v) * v;
    return s;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

}  // namespace nowcast::nn

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace evoada {

/// Allocates on 64-byte boundaries. Vectorized GEMM kernels pick their loop
/// peeling from the buffer address, so fixed alignment is what makes float
/// results independent of heap history.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major array with a declared shape.
template <typename T>
struct Tensor {
  std::vector<std::uint32_t> shape;
  Buffer<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::uint32_t> dims, T fill = T(0)) : shape(std::move(dims)) {
    data.assign(element_count(shape), fill);
  }

  std::size_t size() const { return data.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }
  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  static std::size_t element_count(const std::vector<std::uint32_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }
};

/// Activations of a batch, stored channel-major: index (c, n, y, x) maps to
/// ((c * batch + n) * height + y) * width + x. With this layout a
/// convolution's GEMM output is already in place.
template <typename T>
struct FeatureMap {
  std::size_t channels = 0;
  std::size_t batch = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Buffer<T> data;

  FeatureMap() = default;
  FeatureMap(std::size_t c, std::size_t n, std::size_t h, std::size_t w, T fill = T(0))
      : channels(c), batch(n), height(h), width(w), data(c * n * h * w, fill) {}

  std::size_t positions() const { return height * width; }
  std::size_t index(std::size_t c, std::size_t n, std::size_t y, std::size_t x) const {
    return ((c * batch + n) * height + y) * width + x;
  }
  T& at(std::size_t c, std::size_t n, std::size_t y, std::size_t x) { return data[index(c, n, y, x)]; }
  const T& at(std::size_t c, std::size_t n, std::size_t y, std::size_t x) const {
    return data[index(c, n, y, x)];
  }
  /// Start of the contiguous H*W plane for (c, n).
  T* plane(std::size_t c, std::size_t n) { return data.data() + (c * batch + n) * positions(); }
  const T* plane(std::size_t c, std::size_t n) const {
    return data.data() + (c * batch + n) * positions();
  }
  bool same_shape(const FeatureMap& o) const {
    return channels == o.channels && batch == o.batch && height == o.height && width == o.width;
  }

  template <typename U>
  FeatureMap<U> cast() const {
    FeatureMap<U> out(channels, batch, height, width);
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

}  // namespace evoada

#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

namespace genrec {

// Dense row-major tensor owning its storage.
template <typename T>
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)), data(count(shape)) {}

  static std::size_t count(const std::vector<std::int64_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1},
                           [](std::size_t a, std::int64_t b) { return a * static_cast<std::size_t>(b); });
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  std::span<T> span() { return data; }
  std::span<const T> span() const { return data; }
  T* row(std::size_t r) { return data.data() + r * static_cast<std::size_t>(shape.back()); }
  const T* row(std::size_t r) const {
    return data.data() + r * static_cast<std::size_t>(shape.back());
  }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }
};

}  // namespace genrec

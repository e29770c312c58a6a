#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <vector>

#include "ressenet/common.hpp"
#include "ressenet/rng.hpp"

namespace ressenet {

// Dense row-major tensor. Values are immutable once a tensor has entered a
// forward pass; only the grad buffer is written afterwards (by the backward
// sweep) and only parameters are rewritten between passes (by the optimizer).
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass touches this tensor
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape s, std::vector<T> values, bool rg = false)
      : shape(std::move(s)), data(std::move(values)), requires_grad(rg) {
    if (numel(shape) != static_cast<std::int64_t>(data.size())) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
  }

  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(Shape shape, std::vector<T> values, bool rg = false) {
  return std::make_shared<Tensor<T>>(std::move(shape), std::move(values), rg);
}

template <typename T>
TensorPtr<T> full(Shape shape, T value, bool rg = false) {
  std::vector<T> v(static_cast<std::size_t>(numel(shape)), value);
  return make_tensor<T>(std::move(shape), std::move(v), rg);
}

template <typename T>
TensorPtr<T> zeros(Shape shape, bool rg = false) {
  return full<T>(std::move(shape), T(0), rg);
}

template <typename T>
TensorPtr<T> ones(Shape shape, bool rg = false) {
  return full<T>(std::move(shape), T(1), rg);
}

template <typename T>
TensorPtr<T> randn(Shape shape, Rng& rng, double stddev = 1.0, bool rg = false) {
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
  return make_tensor<T>(std::move(shape), std::move(v), rg);
}

template <typename T>
bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape == b.shape;
}

}  // namespace ressenet

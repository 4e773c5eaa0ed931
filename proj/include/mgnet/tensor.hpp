#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "mgnet/common.hpp"
#include "mgnet/rng.hpp"

namespace mgnet {

// Dense 4-D shape (batch, channels, height, width).
struct Shape {
  i64 n = 0, c = 0, h = 0, w = 0;

  i64 numel() const { return n * c * h * w; }
  bool operator==(const Shape&) const = default;

  std::string str() const { return cat("(", n, ",", c, ",", h, ",", w, ")"); }
};

// Dense NCHW tensor with an optional gradient buffer of the same shape.
// Gradients accumulate: backward rules add into `grad`, never overwrite, so
// re-running backward after zeroing reproduces the same values.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until ensure_grad()
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, bool rg = false)
      : shape(s), data(static_cast<std::size_t>(s.numel()), T(0)), requires_grad(rg) {}

  i64 numel() const { return shape.numel(); }

  i64 index(i64 n, i64 c, i64 y, i64 x) const {
    return ((n * shape.c + c) * shape.h + y) * shape.w + x;
  }
  T& at(i64 n, i64 c, i64 y, i64 x) { return data[index(n, c, y, x)]; }
  const T& at(i64 n, i64 c, i64 y, i64 x) const { return data[index(n, c, y, x)]; }

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) grad.assign(grad.size(), T(0));
  }
  T& grad_at(i64 n, i64 c, i64 y, i64 x) { return grad[index(n, c, y, x)]; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <class T>
TensorPtr<T> make_tensor(Shape s, bool requires_grad = false) {
  return std::make_shared<Tensor<T>>(s, requires_grad);
}

template <class T>
TensorPtr<T> full_tensor(Shape s, T value, bool requires_grad = false) {
  auto t = make_tensor<T>(s, requires_grad);
  std::fill(t->data.begin(), t->data.end(), value);
  return t;
}

template <class T>
TensorPtr<T> tensor_from(Shape s, std::vector<T> values, bool requires_grad = false) {
  if (static_cast<i64>(values.size()) != s.numel())
    throw ShapeError(cat("tensor_from: ", values.size(), " values for shape ", s.str()));
  auto t = make_tensor<T>(s, requires_grad);
  t->data = std::move(values);
  return t;
}

template <class T>
TensorPtr<T> random_uniform(Shape s, Rng& rng, double lo, double hi, bool requires_grad = false) {
  auto t = make_tensor<T>(s, requires_grad);
  for (auto& v : t->data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <class T>
TensorPtr<T> random_normal(Shape s, Rng& rng, double mean, double stddev,
                           bool requires_grad = false) {
  auto t = make_tensor<T>(s, requires_grad);
  for (auto& v : t->data) v = static_cast<T>(rng.normal(mean, stddev));
  return t;
}

template <class T>
TensorPtr<T> clone_tensor(const Tensor<T>& src) {
  auto t = make_tensor<T>(src.shape, src.requires_grad);
  t->data = src.data;
  return t;
}

namespace detail {

// Debug-build guard: no op may emit NaN/Inf from finite inputs.
template <class T>
inline void check_finite(const Tensor<T>& t, const char* op) {
#ifndef NDEBUG
  if (!t.all_finite()) throw TrainError(cat(op, ": non-finite value in output ", t.shape.str()));
#else
  (void)t;
  (void)op;
#endif
}

}  // namespace detail

}  // namespace mgnet

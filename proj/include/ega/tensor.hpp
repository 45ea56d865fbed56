#pragma once

// Dense vector/matrix numerics shared by every module.
//
// Row-major storage, templated on the scalar type: `float` is used for
// training and evaluation, `double` exists for finite-difference checks.
// Every derivative below is hand-derived; there is no autodiff tape.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <type_traits>
#include <vector>

#include "ega/error.hpp"

namespace ega {

/// Inputs whose l2 norm falls below this are rejected by l2_normalize.
inline constexpr double kNormEpsilon = 1e-12;

/// Non-owning row-major view.
template <typename T>
struct MatrixView {
  T* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<T> row(std::size_t r) const { return {data + r * cols, cols}; }
  std::size_t size() const { return rows * cols; }

  operator MatrixView<const T>() const
    requires(!std::is_const_v<T>)
  {
    return {data, rows, cols};
  }
};

template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length does not match rows*cols");
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  MatrixView<T> view() { return {data_.data(), rows_, cols_}; }
  MatrixView<const T> view() const { return {data_.data(), rows_, cols_}; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

// ---------------------------------------------------------------------------
// Level-1 helpers. Reductions run sequentially in index order.

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  T acc = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T norm2(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

/// y += alpha * x
template <typename T>
void axpy(T alpha, std::span<const T> x, std::span<T> y) {
  if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

template <typename T>
bool all_finite(std::span<const T> a) {
  return std::all_of(a.begin(), a.end(), [](T v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Level-2.

/// out = W x (+ bias when non-empty)
template <typename T>
void matvec(MatrixView<const T> w, std::span<const T> x, std::span<T> out,
            std::span<const T> bias = {}) {
  if (w.cols != x.size() || w.rows != out.size()) {
    throw DimensionError("matvec: dimension mismatch");
  }
  if (!bias.empty() && bias.size() != w.rows) throw DimensionError("matvec: bias length");
  for (std::size_t r = 0; r < w.rows; ++r) {
    const T* wr = w.data + r * w.cols;
    T acc = T(0);
    for (std::size_t c = 0; c < w.cols; ++c) acc += wr[c] * x[c];
    out[r] = bias.empty() ? acc : acc + bias[r];
  }
}

template <typename T>
std::vector<T> matvec(const Matrix<T>& w, std::span<const T> x) {
  std::vector<T> out(w.rows());
  matvec<T>(w.view(), x, out);
  return out;
}

/// out += W^T y
template <typename T>
void matvec_transposed_acc(MatrixView<const T> w, std::span<const T> y, std::span<T> out) {
  if (w.rows != y.size() || w.cols != out.size()) {
    throw DimensionError("matvec_transposed: dimension mismatch");
  }
  for (std::size_t r = 0; r < w.rows; ++r) {
    const T yr = y[r];
    if (yr == T(0)) continue;
    const T* wr = w.data + r * w.cols;
    for (std::size_t c = 0; c < w.cols; ++c) out[c] += wr[c] * yr;
  }
}

/// G += u v^T
template <typename T>
void outer_acc(std::span<const T> u, std::span<const T> v, MatrixView<T> g) {
  if (g.rows != u.size() || g.cols != v.size()) throw DimensionError("outer: dimension mismatch");
  for (std::size_t r = 0; r < g.rows; ++r) {
    const T ur = u[r];
    if (ur == T(0)) continue;
    T* gr = g.data + r * g.cols;
    for (std::size_t c = 0; c < g.cols; ++c) gr[c] += ur * v[c];
  }
}

// ---------------------------------------------------------------------------
// Nonlinearities. GELU is the tanh approximation.

template <typename T>
T gelu(T x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = T(0.044715);
  const T inner = k * (x + c * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_grad(T x) {
  constexpr T k = T(0.7978845608028654);
  constexpr T c = T(0.044715);
  const T inner = k * (x + c * x * x * x);
  const T th = std::tanh(inner);
  const T sech2 = T(1) - th * th;
  return T(0.5) * (T(1) + th) + T(0.5) * x * sech2 * k * (T(1) + T(3) * c * x * x);
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T sigmoid_grad(T x) {
  const T s = sigmoid(x);
  return s * (T(1) - s);
}

template <typename T>
void gelu(std::span<const T> x, std::span<T> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu(x[i]);
}

template <typename T>
std::vector<T> gelu(std::span<const T> x) {
  std::vector<T> out(x.size());
  gelu<T>(x, out);
  return out;
}

template <typename T>
std::vector<T> gelu_grad(std::span<const T> x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = gelu_grad(x[i]);
  return out;
}

template <typename T>
void sigmoid(std::span<const T> x, std::span<T> out) {
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
}

template <typename T>
std::vector<T> sigmoid(std::span<const T> x) {
  std::vector<T> out(x.size());
  sigmoid<T>(x, out);
  return out;
}

template <typename T>
std::vector<T> sigmoid_grad(std::span<const T> x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid_grad(x[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Hypersphere projection.

/// out = x / ||x||; returns ||x||. Throws DegenerateNormError below kNormEpsilon.
template <typename T>
T l2_normalize(std::span<const T> x, std::span<T> out) {
  const T n = norm2(x);
  if (!(static_cast<double>(n) > kNormEpsilon)) {
    throw DegenerateNormError("l2_normalize: input norm below epsilon");
  }
  const T inv = T(1) / n;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
  return n;
}

template <typename T>
std::vector<T> l2_normalize(std::span<const T> x) {
  std::vector<T> out(x.size());
  l2_normalize<T>(x, out);
  return out;
}

/// Jacobian-vector product of l2_normalize at the pre-image with norm `n`
/// whose image is `unit`: out = (v - unit (unit . v)) / n. The map is
/// symmetric, so this also serves as the vector-Jacobian product.
template <typename T>
void l2_normalize_jvp(std::span<const T> unit, T n, std::span<const T> v, std::span<T> out) {
  const T proj = dot(unit, v);
  const T inv = T(1) / n;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - unit[i] * proj) * inv;
}

// ---------------------------------------------------------------------------
// Distances.

template <typename T>
T squared_distance(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionError("distance: dimension mismatch");
  T acc = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

template <typename T>
T euclidean_distance(std::span<const T> a, std::span<const T> b) {
  return std::sqrt(squared_distance(a, b));
}

}  // namespace ega

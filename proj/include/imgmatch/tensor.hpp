#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imgmatch/error.hpp"

namespace imgmatch::numcore {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// Dense row-major tensor. Tensor (f32) is the storage and file type;
// Tensor64 is what the gradient tape computes in.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_)) {
      fail(ErrorKind::kShape, "tensor data length " +
                                  std::to_string(data_.size()) +
                                  " does not match shape " +
                                  shape_string(shape_));
    }
  }

  static BasicTensor scalar(T value) { return BasicTensor({1}, {value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 2-D accessors; caller guarantees rank 2.
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  T item() const {
    if (data_.size() != 1) {
      fail(ErrorKind::kShape,
           "item() on non-scalar tensor of shape " + shape_string(shape_));
    }
    return data_[0];
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  void check_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) {
        fail(ErrorKind::kShape,
             "tensor dimensions must be positive, got " + shape_string(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

enum class Transpose { kNone, kB };

// p x d times d x q. With Transpose::kB the second operand is given as q x d.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b,
                      Transpose tb = Transpose::kNone) {
  const bool bt = tb == Transpose::kB;
  if (a.rank() != 2 || b.rank() != 2 ||
      a.dim(1) != (bt ? b.dim(1) : b.dim(0))) {
    fail(ErrorKind::kShape, "matmul shape mismatch: " +
                                shape_string(a.shape()) + " x " +
                                shape_string(b.shape()) +
                                (bt ? " (transposed)" : ""));
  }
  const std::size_t p = a.dim(0);
  const std::size_t d = a.dim(1);
  const std::size_t q = bt ? b.dim(0) : b.dim(1);
  BasicTensor<T> out({p, q});
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const T av = a.at(i, k);
      if (av == T{0}) continue;
      if (bt) {
        for (std::size_t j = 0; j < q; ++j) out.at(i, j) += av * b.at(j, k);
      } else {
        for (std::size_t j = 0; j < q; ++j) out.at(i, j) += av * b.at(k, j);
      }
    }
  }
  return out;
}

// Softmax along each row. Disabled columns come out as exactly zero.
template <typename T>
BasicTensor<T> row_softmax(const BasicTensor<T>& m,
                           const std::vector<bool>* column_mask = nullptr) {
  if (m.rank() != 2) {
    fail(ErrorKind::kShape,
         "row_softmax expects a matrix, got " + shape_string(m.shape()));
  }
  const std::size_t p = m.dim(0);
  const std::size_t q = m.dim(1);
  if (column_mask != nullptr) {
    if (column_mask->size() != q) {
      fail(ErrorKind::kShape, "row_softmax column mask has " +
                                  std::to_string(column_mask->size()) +
                                  " entries for " + std::to_string(q) +
                                  " columns");
    }
    if (std::none_of(column_mask->begin(), column_mask->end(),
                     [](bool b) { return b; })) {
      fail(ErrorKind::kDomain, "row_softmax: all columns disabled");
    }
  }
  auto enabled = [&](std::size_t j) {
    return column_mask == nullptr || (*column_mask)[j];
  };
  BasicTensor<T> out({p, q});
  for (std::size_t i = 0; i < p; ++i) {
    T row_max = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < q; ++j) {
      if (enabled(j)) row_max = std::max(row_max, m.at(i, j));
    }
    T total{0};
    for (std::size_t j = 0; j < q; ++j) {
      if (!enabled(j)) continue;
      const T e = std::exp(m.at(i, j) - row_max);
      out.at(i, j) = e;
      total += e;
    }
    for (std::size_t j = 0; j < q; ++j) out.at(i, j) /= total;
  }
  return out;
}

enum class ElementwiseKind { kAdd, kSub, kMul, kScale, kNeg };

template <typename T>
BasicTensor<T> elementwise(ElementwiseKind kind, const BasicTensor<T>& a,
                           const BasicTensor<T>& b) {
  if (kind == ElementwiseKind::kScale || kind == ElementwiseKind::kNeg) {
    fail(ErrorKind::kDomain, "scale/neg take a scalar operand");
  }
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShape, "elementwise shape mismatch: " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    switch (kind) {
      case ElementwiseKind::kAdd: out[i] = a[i] + b[i]; break;
      case ElementwiseKind::kSub: out[i] = a[i] - b[i]; break;
      default: out[i] = a[i] * b[i]; break;
    }
  }
  return out;
}

// Scalar-operand form: add/sub shift by s, mul/scale multiply by s, neg
// ignores s.
template <typename T>
BasicTensor<T> elementwise(ElementwiseKind kind, const BasicTensor<T>& a,
                           T s) {
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    switch (kind) {
      case ElementwiseKind::kAdd: out[i] = a[i] + s; break;
      case ElementwiseKind::kSub: out[i] = a[i] - s; break;
      case ElementwiseKind::kMul:
      case ElementwiseKind::kScale: out[i] = a[i] * s; break;
      case ElementwiseKind::kNeg: out[i] = -a[i]; break;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& m) {
  if (m.rank() != 2) {
    fail(ErrorKind::kShape,
         "transpose expects a matrix, got " + shape_string(m.shape()));
  }
  BasicTensor<T> out({m.dim(1), m.dim(0)});
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < m.dim(1); ++j) out.at(j, i) = m.at(i, j);
  return out;
}

template <typename T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::kShape, "max_abs_diff shape mismatch: " +
                                shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
  T worst{0};
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace imgmatch::numcore

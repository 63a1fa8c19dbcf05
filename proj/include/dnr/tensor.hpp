// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major N-dimensional tensor and the arithmetic, reduction and
// convolution kernels the rest of the library is built on.
//
// Activations use NCHW layout, convolution weights use M x N x h x w
// (filters, input channels, kernel height, kernel width).

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnr {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised whenever a NaN or infinity shows up in a kernel result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tensor {
 public:
  using value_type = T;

  /// An empty tensor: no shape, no data. Used as the "absent" value.
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }
  static Tensor vector(std::initializer_list<T> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return shape_.empty(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T item() const;

  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

/// Throws NumericalError naming `what` when any element is non-finite.
template <typename T>
void ensure_finite(const Tensor<T>& t, const char* what);

// Elementwise. Shapes must match exactly; the scalar overloads are the only
// form of broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
/// sign(0) == 0.
template <typename T> Tensor<T> sign(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);
/// Elementwise clamp into [lo[i], hi[i]].
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, const Tensor<T>& lo, const Tensor<T>& hi);

template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// a^T * b without materializing the transpose.
template <typename T> Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);
/// a * b^T without materializing the transpose.
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

struct Conv2dGeometry {
  std::size_t batch = 0, in_channels = 0, height = 0, width = 0;
  std::size_t filters = 0, kernel_h = 0, kernel_w = 0;
  std::size_t stride = 1, padding = 0;
  std::size_t out_h = 0, out_w = 0;

  /// Validates channel agreement and integral output size.
  static Conv2dGeometry make(const Shape& input, const Shape& weight,
                             std::size_t stride, std::size_t padding);
  Shape output_shape() const { return {batch, filters, out_h, out_w}; }
  std::size_t macs() const {
    return batch * filters * out_h * out_w * in_channels * kernel_h * kernel_w;
  }
};

/// Cross-correlation of an NCHW input with an M x N x h x w weight.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 std::size_t stride, std::size_t padding);
template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight,
                                const Shape& input_shape, std::size_t stride,
                                std::size_t padding);
template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& grad_out, const Tensor<T>& input,
                                 const Shape& weight_shape, std::size_t stride,
                                 std::size_t padding);

enum class ReduceOp { Sum, Mean, Max, ArgMax, L2Norm, SumSquares };

/// Reduces over `axes` (any order, no duplicates); the reduced axes are
/// dropped, a full reduction yields shape {1}. ArgMax returns flat indices
/// within the reduced block, ties go to the lowest index.
template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& t, std::vector<std::size_t> axes);

template <typename T> T sum(const Tensor<T>& t);
template <typename T> T sum_squares(const Tensor<T>& t);
template <typename T> T max_abs(const Tensor<T>& t);
/// Lowest flat index of the maximum.
template <typename T> std::size_t argmax(const Tensor<T>& t);
/// Per-row argmax of a rank-2 tensor.
template <typename T> std::vector<std::size_t> argmax_rows(const Tensor<T>& t);

}  // namespace dnr

// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#include "dnr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "gemm.hpp"

namespace dnr {

std::size_t shape_numel(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor shape " + shape_str(shape) + " has a zero extent");
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

template <typename T, typename F>
Tensor<T> map_unary(const Tensor<T>& a, F f, const char* op) {
  Tensor<T> out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  ensure_finite(out, op);
  return out;
}

template <typename T, typename F>
Tensor<T> map_binary(const Tensor<T>& a, const Tensor<T>& b, F f, const char* op) {
  require_same_shape(a, b, op);
  Tensor<T> out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  ensure_finite(out, op);
  return out;
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
  return Tensor(Shape{values.size()}, std::vector<T>(values));
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

template <typename T>
void ensure_finite(const Tensor<T>& t, const char* what) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) throw NumericalError(std::string(what) + ": non-finite value");
  }
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return map_binary(a, b, [](T x, T y) { return x + y; }, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return map_binary(a, b, [](T x, T y) { return x - y; }, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return map_binary(a, b, [](T x, T y) { return x * y; }, "mul");
}
template <typename T>
Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b) {
  return map_binary(a, b, [](T x, T y) { return std::max(x, y); }, "maximum");
}
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return map_unary(a, [s](T x) { return x + s; }, "add_scalar");
}
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return map_unary(a, [s](T x) { return x * s; }, "scale");
}
template <typename T>
Tensor<T> sign(const Tensor<T>& a) {
  return map_unary(a, [](T x) { return T((x > T(0)) - (x < T(0))); }, "sign");
}
template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return map_unary(a, [](T x) { return std::abs(x); }, "abs");
}
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return map_unary(a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); }, "clamp");
}
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, const Tensor<T>& lo, const Tensor<T>& hi) {
  require_same_shape(a, lo, "clamp");
  require_same_shape(a, hi, "clamp");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::min(std::max(a[i], lo[i]), hi[i]);
  ensure_finite(out, "clamp");
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

namespace {

template <typename T>
Tensor<T> matmul_impl(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb,
                      const char* op) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError(std::string(op) + " expects rank-2 operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::size_t m = ta ? a.dim(1) : a.dim(0);
  const std::size_t ka = ta ? a.dim(0) : a.dim(1);
  const std::size_t kb = tb ? b.dim(1) : b.dim(0);
  const std::size_t n = tb ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw ShapeError(std::string(op) + ": inner dimensions disagree, " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  Tensor<T> out(Shape{m, n});
  detail::gemm(ta, tb, m, n, ka, T(1), a.data().data(), a.dim(1), b.data().data(), b.dim(1),
               T(0), out.data().data(), n);
  ensure_finite(out, op);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  return matmul_impl(a, b, false, false, "matmul");
}
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  return matmul_impl(a, b, true, false, "matmul_tn");
}
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  return matmul_impl(a, b, false, true, "matmul_nt");
}

Conv2dGeometry Conv2dGeometry::make(const Shape& input, const Shape& weight,
                                    std::size_t stride, std::size_t padding) {
  if (input.size() != 4) throw ShapeError("conv2d input must be NCHW, got " + shape_str(input));
  if (weight.size() != 4) throw ShapeError("conv2d weight must be MNhw, got " + shape_str(weight));
  if (stride == 0) throw ShapeError("conv2d stride must be positive");
  Conv2dGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.height = input[2];
  g.width = input[3];
  g.filters = weight[0];
  g.kernel_h = weight[2];
  g.kernel_w = weight[3];
  g.stride = stride;
  g.padding = padding;
  if (weight[1] != g.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(g.in_channels) +
                     " channels, weight expects " + std::to_string(weight[1]));
  }
  const std::size_t ph = g.height + 2 * padding;
  const std::size_t pw = g.width + 2 * padding;
  if (ph < g.kernel_h || pw < g.kernel_w) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  if ((ph - g.kernel_h) % stride != 0 || (pw - g.kernel_w) % stride != 0) {
    throw ShapeError("conv2d: output size is not integral for input " + shape_str(input) +
                     ", kernel " + shape_str(weight) + ", stride " + std::to_string(stride));
  }
  g.out_h = (ph - g.kernel_h) / stride + 1;
  g.out_w = (pw - g.kernel_w) / stride + 1;
  return g;
}

namespace {

// col has shape (N*h*w) x (out_h*out_w) for one image.
template <typename T>
void im2col(const T* image, const Conv2dGeometry& g, T* col) {
  const std::size_t plane = g.out_h * g.out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* src = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        T* dst = col + row * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          T* out_row = dst + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill(out_row, out_row + g.out_w, T(0));
            continue;
          }
          const T* in_row = src + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            out_row[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                              ? T(0)
                              : in_row[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const Conv2dGeometry& g, T* image) {
  const std::size_t plane = g.out_h * g.out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* dst = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        const T* src = col + row * plane;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* in_row = dst + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
            in_row[static_cast<std::size_t>(ix)] += src[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const Conv2dGeometry& g) {
  return g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::size_t stride,
                 std::size_t padding) {
  const auto g = Conv2dGeometry::make(input.shape(), weight.shape(), stride, padding);
  const std::size_t k = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t plane = g.out_h * g.out_w;
  Tensor<T> out(g.output_shape());
  std::vector<T> col(is_pointwise(g) ? 0 : k * plane);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* image = input.data().data() + n * g.in_channels * g.height * g.width;
    const T* rhs = image;
    if (!is_pointwise(g)) {
      im2col(image, g, col.data());
      rhs = col.data();
    }
    detail::gemm(false, false, g.filters, plane, k, T(1), weight.data().data(), k, rhs, plane,
                 T(0), out.data().data() + n * g.filters * plane, plane);
  }
  ensure_finite(out, "conv2d");
  return out;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& grad_out, const Tensor<T>& weight,
                                const Shape& input_shape, std::size_t stride,
                                std::size_t padding) {
  const auto g = Conv2dGeometry::make(input_shape, weight.shape(), stride, padding);
  if (grad_out.shape() != g.output_shape()) {
    throw ShapeError("conv2d_backward_input: gradient shape " + shape_str(grad_out.shape()) +
                     " does not match output " + shape_str(g.output_shape()));
  }
  const std::size_t k = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t plane = g.out_h * g.out_w;
  const std::size_t image_size = g.in_channels * g.height * g.width;
  Tensor<T> grad_in(input_shape);
  std::vector<T> col(k * plane);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* dy = grad_out.data().data() + n * g.filters * plane;
    T* dx = grad_in.data().data() + n * image_size;
    if (is_pointwise(g)) {
      detail::gemm(true, false, k, plane, g.filters, T(1), weight.data().data(), k, dy, plane,
                   T(0), dx, plane);
      continue;
    }
    detail::gemm(true, false, k, plane, g.filters, T(1), weight.data().data(), k, dy, plane,
                 T(0), col.data(), plane);
    col2im(col.data(), g, dx);
  }
  ensure_finite(grad_in, "conv2d_backward_input");
  return grad_in;
}

template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& grad_out, const Tensor<T>& input,
                                 const Shape& weight_shape, std::size_t stride,
                                 std::size_t padding) {
  const auto g = Conv2dGeometry::make(input.shape(), weight_shape, stride, padding);
  if (grad_out.shape() != g.output_shape()) {
    throw ShapeError("conv2d_backward_weight: gradient shape " + shape_str(grad_out.shape()) +
                     " does not match output " + shape_str(g.output_shape()));
  }
  const std::size_t k = g.in_channels * g.kernel_h * g.kernel_w;
  const std::size_t plane = g.out_h * g.out_w;
  Tensor<T> grad_w(weight_shape);
  std::vector<T> col(is_pointwise(g) ? 0 : k * plane);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const T* image = input.data().data() + n * g.in_channels * g.height * g.width;
    const T* rhs = image;
    if (!is_pointwise(g)) {
      im2col(image, g, col.data());
      rhs = col.data();
    }
    const T* dy = grad_out.data().data() + n * g.filters * plane;
    detail::gemm(false, true, g.filters, k, plane, T(1), dy, plane, rhs, plane, T(1),
                 grad_w.data().data(), k);
  }
  ensure_finite(grad_w, "conv2d_backward_weight");
  return grad_w;
}

template <typename T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& t, std::vector<std::size_t> axes) {
  if (t.empty()) throw ShapeError("reduce over an empty tensor");
  std::vector<bool> reduced(t.rank(), false);
  for (auto a : axes) {
    if (a >= t.rank()) throw ShapeError("reduce: axis out of range for " + shape_str(t.shape()));
    if (reduced[a]) throw ShapeError("reduce: duplicate axis");
    reduced[a] = true;
  }
  if (axes.empty()) throw ShapeError("reduce: no axes given");

  Shape out_shape;
  std::size_t block = 1;
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (reduced[i]) block *= t.dim(i);
    else out_shape.push_back(t.dim(i));
  }
  if (out_shape.empty()) out_shape.push_back(1);
  const std::size_t out_n = shape_numel(out_shape);

  // Strides of the kept axes in the output and of the reduced axes inside the block.
  std::vector<std::size_t> out_stride(t.rank(), 0), block_stride(t.rank(), 0);
  {
    std::size_t os = 1, bs = 1;
    for (std::size_t i = t.rank(); i-- > 0;) {
      if (reduced[i]) {
        block_stride[i] = bs;
        bs *= t.dim(i);
      } else {
        out_stride[i] = os;
        os *= t.dim(i);
      }
    }
  }

  std::vector<T> acc(out_n, T(0));
  std::vector<std::size_t> best_idx(out_n, 0);
  std::vector<bool> seen(out_n, false);
  std::vector<std::size_t> index(t.rank(), 0);
  for (std::size_t flat = 0; flat < t.numel(); ++flat) {
    std::size_t o = 0, b = 0;
    for (std::size_t i = 0; i < t.rank(); ++i) {
      o += index[i] * out_stride[i];
      b += index[i] * block_stride[i];
    }
    const T v = t[flat];
    switch (op) {
      case ReduceOp::Sum:
      case ReduceOp::Mean:
        acc[o] += v;
        break;
      case ReduceOp::L2Norm:
      case ReduceOp::SumSquares:
        acc[o] += v * v;
        break;
      case ReduceOp::Max:
      case ReduceOp::ArgMax:
        // Row-major traversal visits each block in increasing b, so a strict
        // comparison keeps the lowest index on ties.
        if (!seen[o] || v > acc[o]) {
          acc[o] = v;
          best_idx[o] = b;
          seen[o] = true;
        }
        break;
    }
    for (std::size_t i = t.rank(); i-- > 0;) {
      if (++index[i] < t.dim(i)) break;
      index[i] = 0;
    }
  }
  Tensor<T> out(out_shape);
  for (std::size_t i = 0; i < out_n; ++i) {
    switch (op) {
      case ReduceOp::Sum:
      case ReduceOp::SumSquares:
      case ReduceOp::Max:
        out[i] = acc[i];
        break;
      case ReduceOp::Mean:
        out[i] = acc[i] / static_cast<T>(block);
        break;
      case ReduceOp::L2Norm:
        out[i] = std::sqrt(acc[i]);
        break;
      case ReduceOp::ArgMax:
        out[i] = static_cast<T>(best_idx[i]);
        break;
    }
  }
  ensure_finite(out, "reduce");
  return out;
}

template <typename T>
T sum(const Tensor<T>& t) {
  if (t.empty()) throw ShapeError("sum over an empty tensor");
  T s = 0;
  for (T v : t.data()) s += v;
  return s;
}

template <typename T>
T sum_squares(const Tensor<T>& t) {
  if (t.empty()) throw ShapeError("sum_squares over an empty tensor");
  T s = 0;
  for (T v : t.data()) s += v * v;
  return s;
}

template <typename T>
T max_abs(const Tensor<T>& t) {
  T m = 0;
  for (T v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
std::size_t argmax(const Tensor<T>& t) {
  if (t.empty()) throw ShapeError("argmax over an empty tensor");
  auto d = t.data();
  return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& t) {
  if (t.rank() != 2) throw ShapeError("argmax_rows expects rank 2, got " + shape_str(t.shape()));
  const std::size_t r = t.dim(0), c = t.dim(1);
  std::vector<std::size_t> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = t.data().data() + i * c;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + c) - row);
  }
  return out;
}

#define DNR_INSTANTIATE_TENSOR(T)                                                         \
  template class Tensor<T>;                                                               \
  template void ensure_finite<T>(const Tensor<T>&, const char*);                          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> maximum<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                  \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                       \
  template Tensor<T> sign<T>(const Tensor<T>&);                                           \
  template Tensor<T> abs<T>(const Tensor<T>&);                                            \
  template Tensor<T> clamp<T>(const Tensor<T>&, T, T);                                    \
  template Tensor<T> clamp<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                      \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> matmul_tn<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> matmul_nt<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, std::size_t,           \
                               std::size_t);                                              \
  template Tensor<T> conv2d_backward_input<T>(const Tensor<T>&, const Tensor<T>&,         \
                                              const Shape&, std::size_t, std::size_t);    \
  template Tensor<T> conv2d_backward_weight<T>(const Tensor<T>&, const Tensor<T>&,        \
                                               const Shape&, std::size_t, std::size_t);   \
  template Tensor<T> reduce<T>(ReduceOp, const Tensor<T>&, std::vector<std::size_t>);     \
  template T sum<T>(const Tensor<T>&);                                                    \
  template T sum_squares<T>(const Tensor<T>&);                                            \
  template T max_abs<T>(const Tensor<T>&);                                                \
  template std::size_t argmax<T>(const Tensor<T>&);                                       \
  template std::vector<std::size_t> argmax_rows<T>(const Tensor<T>&);

DNR_INSTANTIATE_TENSOR(float)
DNR_INSTANTIATE_TENSOR(double)

}  // namespace dnr

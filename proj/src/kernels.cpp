// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#include "dnr/kernels.hpp"

#include <cblas.h>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "gemm.hpp"

namespace dnr {
namespace detail {

namespace {

// Deterministic reductions need a fixed thread count inside OpenBLAS.
const bool kBlasSingleThreaded = [] {
  openblas_set_num_threads(1);
  return true;
}();

CBLAS_TRANSPOSE trans(bool t) { return t ? CblasTrans : CblasNoTrans; }
blasint as_int(std::size_t v) { return static_cast<blasint>(v); }

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc) {
  (void)kBlasSingleThreaded;
  cblas_sgemm(CblasRowMajor, trans(trans_a), trans(trans_b), as_int(m), as_int(n), as_int(k),
              alpha, a, as_int(lda), b, as_int(ldb), beta, c, as_int(ldc));
}

// OpenBLAS 0.3.20 returns wrong dgemm results for many small shapes on
// AVX-512 hosts, so the double path goes through Eigen instead.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc) {
  using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Stride = Eigen::OuterStride<>;
  using ConstMap = Eigen::Map<const Matrix, 0, Stride>;
  const auto idx = [](std::size_t v) { return static_cast<Eigen::Index>(v); };
  const ConstMap A(a, idx(trans_a ? k : m), idx(trans_a ? m : k), Stride(idx(lda)));
  const ConstMap B(b, idx(trans_b ? n : k), idx(trans_b ? k : n), Stride(idx(ldb)));
  Eigen::Map<Matrix, 0, Stride> C(c, idx(m), idx(n), Stride(idx(ldc)));
  if (beta == 0.0) C.setZero();
  else if (beta != 1.0) C *= beta;
  const auto accumulate = [&](const auto& opa, const auto& opb) { C.noalias() += alpha * (opa * opb); };
  if (trans_a && trans_b) accumulate(A.transpose(), B.transpose());
  else if (trans_a) accumulate(A.transpose(), B);
  else if (trans_b) accumulate(A, B.transpose());
  else accumulate(A, B);
}

}  // namespace detail

namespace kernels {

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

template <typename T>
void require_vector(const Tensor<T>& v, std::size_t n, const char* op) {
  if (v.rank() != 1 || v.dim(0) != n) {
    throw ShapeError(std::string(op) + ": expected a vector of length " + std::to_string(n) +
                     ", got " + shape_str(v.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& x) {
  if (grad_out.shape() != x.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x.shape(), 4, "add_channel_bias");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  require_vector(bias, c, "add_channel_bias");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t base = (i * c + j) * plane;
      for (std::size_t p = 0; p < plane; ++p) out[base + p] = x[base + p] + bias[j];
    }
  ensure_finite(out, "add_channel_bias");
  return out;
}

template <typename T>
Tensor<T> channel_sum(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "channel_sum");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{c});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const T* p = x.data().data() + (i * c + j) * plane;
      T s = 0;
      for (std::size_t k = 0; k < plane; ++k) s += p[k];
      out[j] += s;
    }
  return out;
}

template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require_rank(x.shape(), 2, "add_row_bias");
  const std::size_t r = x.dim(0), c = x.dim(1);
  require_vector(bias, c, "add_row_bias");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] + bias[j];
  ensure_finite(out, "add_row_bias");
  return out;
}

template <typename T>
Tensor<T> column_sum(const Tensor<T>& x) {
  require_rank(x.shape(), 2, "column_sum");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor<T> out(Shape{c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += x[i * c + j];
  return out;
}

template <typename T>
PoolResult<T> max_pool2d(const Tensor<T>& x, std::size_t window) {
  require_rank(x.shape(), 4, "max_pool2d");
  if (window == 0) throw ShapeError("max_pool2d: window must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / window, ow = w / window;
  if (oh == 0 || ow == 0) throw ShapeError("max_pool2d: window larger than input " + shape_str(x.shape()));
  PoolResult<T> r{Tensor<T>(Shape{n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        std::size_t best = base + (i * window) * w + j * window;
        for (std::size_t di = 0; di < window; ++di)
          for (std::size_t dj = 0; dj < window; ++dj) {
            const std::size_t idx = base + (i * window + di) * w + (j * window + dj);
            if (x[idx] > x[best]) best = idx;
          }
        r.output[o] = x[best];
        r.argmax[o] = best;
      }
  }
  return r;
}

template <typename T>
Tensor<T> max_pool2d_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                              const Shape& input_shape) {
  if (grad_out.numel() != argmax.size()) throw ShapeError("max_pool2d_backward: size mismatch");
  Tensor<T> grad_in(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) grad_in[argmax[o]] += grad_out[o];
  return grad_in;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    const T* p = x.data().data() + i * plane;
    T s = 0;
    for (std::size_t k = 0; k < plane; ++k) s += p[k];
    out[i] = s / static_cast<T>(plane);
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
  require_rank(input_shape, 4, "global_avg_pool_backward");
  const std::size_t nc = input_shape[0] * input_shape[1];
  const std::size_t plane = input_shape[2] * input_shape[3];
  if (grad_out.numel() != nc) throw ShapeError("global_avg_pool_backward: size mismatch");
  Tensor<T> grad_in(input_shape);
  for (std::size_t i = 0; i < nc; ++i) {
    const T g = grad_out[i] / static_cast<T>(plane);
    std::fill_n(grad_in.data().data() + i * plane, plane, g);
  }
  return grad_in;
}

template <typename T>
T softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                        Tensor<T>* probs) {
  require_rank(logits.shape(), 2, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw ShapeError("softmax_cross_entropy: label count mismatch");
  Tensor<T> p(logits.shape());
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw std::out_of_range("softmax_cross_entropy: label out of range");
    }
    const T* row = logits.data().data() + i * k;
    const T shift = *std::max_element(row, row + k);
    T z = 0;
    for (std::size_t j = 0; j < k; ++j) {
      p[i * k + j] = std::exp(row[j] - shift);
      z += p[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) p[i * k + j] /= z;
    total += std::log(z) + shift - row[labels[i]];
  }
  const T loss = total / static_cast<T>(n);
  if (!std::isfinite(loss)) throw NumericalError("softmax_cross_entropy: non-finite loss");
  if (probs) *probs = std::move(p);
  return loss;
}

template <typename T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& probs, const std::vector<int>& labels,
                                         T grad_out) {
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  Tensor<T> g(probs.shape());
  const T s = grad_out / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const T onehot = static_cast<std::size_t>(labels[i]) == j ? T(1) : T(0);
      g[i * k + j] = (probs[i * k + j] - onehot) * s;
    }
  return g;
}

template <typename T>
BatchNormForward<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& gamma,
                                    const Tensor<T>& beta, T eps) {
  require_rank(x.shape(), 4, "batchnorm");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  require_vector(gamma, c, "batchnorm");
  require_vector(beta, c, "batchnorm");
  const T count = static_cast<T>(n * plane);
  BatchNormForward<T> f{Tensor<T>(x.shape()), Tensor<T>(x.shape()), Tensor<T>(Shape{c}),
                        Tensor<T>(Shape{c}), Tensor<T>(Shape{c})};
  for (std::size_t j = 0; j < c; ++j) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = x.data().data() + (i * c + j) * plane;
      for (std::size_t k = 0; k < plane; ++k) s += p[k];
    }
    const T mean = s / count;
    T v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const T* p = x.data().data() + (i * c + j) * plane;
      for (std::size_t k = 0; k < plane; ++k) v += (p[k] - mean) * (p[k] - mean);
    }
    const T var = v / count;
    const T inv_std = T(1) / std::sqrt(var + eps);
    f.mean[j] = mean;
    f.batch_var[j] = var;
    f.inv_std[j] = inv_std;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + j) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const T xh = (x[base + k] - mean) * inv_std;
        f.normalized[base + k] = xh;
        f.output[base + k] = gamma[j] * xh + beta[j];
      }
    }
  }
  ensure_finite(f.output, "batchnorm");
  return f;
}

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                         const Tensor<T>& mean, const Tensor<T>& var, T eps) {
  require_rank(x.shape(), 4, "batchnorm");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  require_vector(gamma, c, "batchnorm");
  Tensor<T> out(x.shape());
  for (std::size_t j = 0; j < c; ++j) {
    const T inv_std = T(1) / std::sqrt(var[j] + eps);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + j) * plane;
      for (std::size_t k = 0; k < plane; ++k)
        out[base + k] = gamma[j] * (x[base + k] - mean[j]) * inv_std + beta[j];
    }
  }
  ensure_finite(out, "batchnorm");
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_train_backward(const Tensor<T>& grad_out,
                                           const BatchNormForward<T>& fwd,
                                           const Tensor<T>& gamma) {
  const Shape& s = fwd.normalized.shape();
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  const T count = static_cast<T>(n * plane);
  BatchNormGrads<T> g{Tensor<T>(s), Tensor<T>(Shape{c}), Tensor<T>(Shape{c})};
  for (std::size_t j = 0; j < c; ++j) {
    T sum_dy = 0, sum_dy_xh = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + j) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum_dy += grad_out[base + k];
        sum_dy_xh += grad_out[base + k] * fwd.normalized[base + k];
      }
    }
    g.beta[j] = sum_dy;
    g.gamma[j] = sum_dy_xh;
    const T scale = gamma[j] * fwd.inv_std[j] / count;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + j) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        g.input[base + k] =
            scale * (count * grad_out[base + k] - sum_dy - fwd.normalized[base + k] * sum_dy_xh);
      }
    }
  }
  return g;
}

template <typename T>
BatchNormGrads<T> batchnorm_eval_backward(const Tensor<T>& grad_out, const Tensor<T>& x,
                                          const Tensor<T>& gamma, const Tensor<T>& mean,
                                          const Tensor<T>& var, T eps) {
  const Shape& s = x.shape();
  const std::size_t n = s[0], c = s[1], plane = s[2] * s[3];
  BatchNormGrads<T> g{Tensor<T>(s), Tensor<T>(Shape{c}), Tensor<T>(Shape{c})};
  for (std::size_t j = 0; j < c; ++j) {
    const T inv_std = T(1) / std::sqrt(var[j] + eps);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + j) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const T dy = grad_out[base + k];
        g.beta[j] += dy;
        g.gamma[j] += dy * (x[base + k] - mean[j]) * inv_std;
        g.input[base + k] = dy * gamma[j] * inv_std;
      }
    }
  }
  return g;
}

#define DNR_INSTANTIATE_KERNELS(T)                                                          \
  template Tensor<T> relu<T>(const Tensor<T>&);                                             \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> add_channel_bias<T>(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> channel_sum<T>(const Tensor<T>&);                                      \
  template Tensor<T> add_row_bias<T>(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> column_sum<T>(const Tensor<T>&);                                       \
  template PoolResult<T> max_pool2d<T>(const Tensor<T>&, std::size_t);                      \
  template Tensor<T> max_pool2d_backward<T>(const Tensor<T>&, const std::vector<std::size_t>&, \
                                            const Shape&);                                  \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                  \
  template Tensor<T> global_avg_pool_backward<T>(const Tensor<T>&, const Shape&);           \
  template T softmax_cross_entropy<T>(const Tensor<T>&, const std::vector<int>&, Tensor<T>*); \
  template Tensor<T> softmax_cross_entropy_backward<T>(const Tensor<T>&,                    \
                                                       const std::vector<int>&, T);         \
  template BatchNormForward<T> batchnorm_train<T>(const Tensor<T>&, const Tensor<T>&,       \
                                                  const Tensor<T>&, T);                     \
  template Tensor<T> batchnorm_eval<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                       const Tensor<T>&, const Tensor<T>&, T);              \
  template BatchNormGrads<T> batchnorm_train_backward<T>(                                   \
      const Tensor<T>&, const BatchNormForward<T>&, const Tensor<T>&);                      \
  template BatchNormGrads<T> batchnorm_eval_backward<T>(const Tensor<T>&, const Tensor<T>&, \
                                                        const Tensor<T>&, const Tensor<T>&, \
                                                        const Tensor<T>&, T);

DNR_INSTANTIATE_KERNELS(float)
DNR_INSTANTIATE_KERNELS(double)

}  // namespace kernels
}  // namespace dnr

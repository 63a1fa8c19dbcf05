// Copyright (c) 2026, The DNR Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>

namespace dnr::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C. Float runs on OpenBLAS,
// double on Eigen.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
          const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
          std::size_t ldc);
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
          double* c, std::size_t ldc);

}  // namespace dnr::detail

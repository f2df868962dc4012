#pragma once

#include <cstddef>

// Plain matrix kernels over row-major buffers. Every output row is a function
// of its own input row only, accumulated in ascending inner-index order, so a
// row computes to the same bits no matter how many rows share the call.
namespace vvlab::kernels {

// c[m x n] = a[m x k] * b[k x n]
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
               std::size_t n);

// c[m x n] = a[m x k] * b[n x k]^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
               std::size_t n);

// c[k x n] += a[m x k]^T * b[m x n]
template <typename T>
void matmul_tn_accumulate(const T* a, const T* b, T* c, std::size_t m,
                          std::size_t k, std::size_t n);

// out[cols x rows] = in[rows x cols]^T
template <typename T>
void transpose(const T* in, T* out, std::size_t rows, std::size_t cols);

}  // namespace vvlab::kernels

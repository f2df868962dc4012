#include "vvlab/autodiff/kernels.hpp"

#include <algorithm>
#include <vector>

namespace vvlab::kernels {

template <typename T>
void matmul_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict c_row = c + i * n;
    std::fill(c_row, c_row + n, T(0));
    const T* a_row = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T s = a_row[p];
      const T* __restrict b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += s * b_row[j];
    }
  }
}

template <typename T>
void transpose(const T* in, T* out, std::size_t rows, std::size_t cols) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    const std::size_t r1 = std::min(rows, r0 + kBlock);
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t col = c0; col < c1; ++col) out[col * rows + r] = in[r * cols + col];
      }
    }
  }
}

template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
               std::size_t n) {
  std::vector<T> bt(k * n);
  transpose(b, bt.data(), n, k);
  matmul_nn(a, bt.data(), c, m, k, n);
}

template <typename T>
void matmul_tn_accumulate(const T* a, const T* b, T* c, std::size_t m,
                          std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* a_row = a + i * k;
    const T* __restrict b_row = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T s = a_row[p];
      if (s == T(0)) continue;
      T* __restrict c_row = c + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += s * b_row[j];
    }
  }
}

template void matmul_nn<float>(const float*, const float*, float*, std::size_t,
                               std::size_t, std::size_t);
template void matmul_nn<double>(const double*, const double*, double*, std::size_t,
                                std::size_t, std::size_t);
template void matmul_nt<float>(const float*, const float*, float*, std::size_t,
                               std::size_t, std::size_t);
template void matmul_nt<double>(const double*, const double*, double*, std::size_t,
                                std::size_t, std::size_t);
template void matmul_tn_accumulate<float>(const float*, const float*, float*,
                                          std::size_t, std::size_t, std::size_t);
template void matmul_tn_accumulate<double>(const double*, const double*, double*,
                                           std::size_t, std::size_t, std::size_t);
template void transpose<float>(const float*, float*, std::size_t, std::size_t);
template void transpose<double>(const double*, double*, std::size_t, std::size_t);

}  // namespace vvlab::kernels

// Matrix-multiply kernels. `serial` is the reference; `omp` splits output rows
// across OpenMP threads with the same per-element accumulation order, so both
// produce bit-identical results.
#pragma once

#include <cstddef>

namespace sager::kernels {

// C[m x n] (+)= A[m x k] * B[k x n]
// gemm_nt: C[m x n] (+)= A[m x k] * B[n x k]^T
// gemm_tn: C[m x n] (+)= A[k x m]^T * B[k x n]
namespace serial {
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
}  // namespace serial

namespace omp {
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate);
}  // namespace omp

// Below this many multiply-adds the omp variants run on the calling thread.
inline constexpr std::size_t kParallelThreshold = 1u << 18;

// Caps the worker count used by parallel sections (0 = OpenMP default).
void set_max_threads(int n);
int max_threads();

template <typename T>
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate) {
  omp::gemm_nn(m, n, k, a, b, c, accumulate);
}
template <typename T>
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate) {
  omp::gemm_nt(m, n, k, a, b, c, accumulate);
}
template <typename T>
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate) {
  omp::gemm_tn(m, n, k, a, b, c, accumulate);
}

}  // namespace sager::kernels

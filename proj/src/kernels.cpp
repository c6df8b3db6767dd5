#include "sager/kernels.hpp"

#include <algorithm>

#include <omp.h>

namespace sager::kernels {

namespace {

int g_max_threads = 0;

template <typename T>
inline void row_nn(std::size_t i, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                   bool accumulate) {
  T* ci = c + i * n;
  if (!accumulate) std::fill(ci, ci + n, T(0));
  const T* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const T av = ai[p];
    const T* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

template <typename T>
inline void row_nt(std::size_t i, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                   bool accumulate) {
  T* ci = c + i * n;
  const T* ai = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const T* bj = b + j * k;
    T acc = T(0);
#pragma omp simd reduction(+ : acc)
    for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
    ci[j] = accumulate ? ci[j] + acc : acc;
  }
}

template <typename T>
inline void row_tn(std::size_t i, std::size_t m, std::size_t n, std::size_t k, const T* a,
                   const T* b, T* c, bool accumulate) {
  T* ci = c + i * n;
  if (!accumulate) std::fill(ci, ci + n, T(0));
  for (std::size_t p = 0; p < k; ++p) {
    const T av = a[p * m + i];
    const T* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

}  // namespace

void set_max_threads(int n) {
  g_max_threads = n;
  if (n > 0) omp_set_num_threads(n);
}

int max_threads() { return g_max_threads > 0 ? g_max_threads : omp_get_max_threads(); }

namespace serial {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) row_nn(i, n, k, a, b, c, accumulate);
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) row_nt(i, n, k, a, b, c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) row_tn(i, m, n, k, a, b, c, accumulate);
}

}  // namespace serial

namespace omp {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  const bool big = m * n * k >= kParallelThreshold && m > 1;
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (big)
  for (long i = 0; i < rows; ++i) row_nn(static_cast<std::size_t>(i), n, k, a, b, c, accumulate);
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  const bool big = m * n * k >= kParallelThreshold && m > 1;
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (big)
  for (long i = 0; i < rows; ++i) row_nt(static_cast<std::size_t>(i), n, k, a, b, c, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  const bool big = m * n * k >= kParallelThreshold && m > 1;
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (big)
  for (long i = 0; i < rows; ++i) {
    row_tn(static_cast<std::size_t>(i), m, n, k, a, b, c, accumulate);
  }
}

}  // namespace omp

#define SAGER_INSTANTIATE_GEMM(NS, T)                                                        \
  template void NS::gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, \
                               bool);                                                        \
  template void NS::gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, \
                               bool);                                                        \
  template void NS::gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, \
                               bool);

SAGER_INSTANTIATE_GEMM(serial, float)
SAGER_INSTANTIATE_GEMM(serial, double)
SAGER_INSTANTIATE_GEMM(omp, float)
SAGER_INSTANTIATE_GEMM(omp, double)

#undef SAGER_INSTANTIATE_GEMM

}  // namespace sager::kernels

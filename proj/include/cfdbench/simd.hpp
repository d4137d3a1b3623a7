#pragma once

// Scalar reference kernels and AVX2 variants for the hot inner loops
// (dot products, axpy accumulation, elementwise nonlinearities, Adam
// updates). The active variant is selected once at startup from CPUID;
// CFDBENCH_SIMD=scalar forces the reference path. Both paths are
// equivalence-tested against each other in tests/test_simd.cpp.

#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <cstring>
#include <string>

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define CFDBENCH_X86 1
#endif

namespace cfdbench::simd {

enum class Isa { Scalar, Avx2 };

inline Isa detect_isa() {
  if (const char* env = std::getenv("CFDBENCH_SIMD")) {
    if (std::string(env) == "scalar") return Isa::Scalar;
  }
#if defined(CFDBENCH_X86) && defined(__AVX2__) && defined(__FMA__)
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::Avx2;
#endif
  return Isa::Scalar;
}

inline Isa active_isa() {
  static const Isa isa = detect_isa();
  return isa;
}

inline const char* isa_name() { return active_isa() == Isa::Avx2 ? "avx2" : "scalar"; }

// ---------------------------------------------------------------------------
// Scalar reference kernels
// ---------------------------------------------------------------------------

namespace ref {

template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// y += alpha * x
template <class T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
inline void scale(T alpha, T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

template <class T>
inline void add(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
inline void mul(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
inline void relu(const T* x, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

// Bias-corrected Adam update for one parameter buffer.
template <class T>
inline void adam_update(T* p, const T* g, T* m, T* v, std::size_t n, T lr, T beta1, T beta2,
                        T eps, T bc1, T bc2) {
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * g[i] * g[i];
    const T mhat = m[i] / bc1;
    const T vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace ref

// ---------------------------------------------------------------------------
// AVX2 variants (float and double)
// ---------------------------------------------------------------------------

#if defined(CFDBENCH_X86) && defined(__AVX2__) && defined(__FMA__)
#define CFDBENCH_HAVE_AVX2 1

namespace avx2 {

inline float dot(const float* a, const float* b, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  alignas(32) float lanes[8];
  _mm256_store_ps(lanes, acc);
  float s = lanes[0] + lanes[1] + lanes[2] + lanes[3] + lanes[4] + lanes[5] + lanes[6] + lanes[7];
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double s = lanes[0] + lanes[1] + lanes[2] + lanes[3];
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

inline void relu(const float* x, float* out, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
  for (; i < n; ++i) out[i] = x[i] > 0.f ? x[i] : 0.f;
}

inline void relu(const double* x, double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  for (; i < n; ++i) out[i] = x[i] > 0. ? x[i] : 0.;
}

}  // namespace avx2

#endif  // CFDBENCH_HAVE_AVX2

// ---------------------------------------------------------------------------
// Dispatched entry points
// ---------------------------------------------------------------------------

template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
#ifdef CFDBENCH_HAVE_AVX2
  if (active_isa() == Isa::Avx2) return avx2::dot(a, b, n);
#endif
  return ref::dot(a, b, n);
}

template <class T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
#ifdef CFDBENCH_HAVE_AVX2
  if (active_isa() == Isa::Avx2) return avx2::axpy(alpha, x, y, n);
#endif
  ref::axpy(alpha, x, y, n);
}

template <class T>
inline void relu(const T* x, T* out, std::size_t n) {
#ifdef CFDBENCH_HAVE_AVX2
  if (active_isa() == Isa::Avx2) return avx2::relu(x, out, n);
#endif
  ref::relu(x, out, n);
}

using ref::add;
using ref::adam_update;
using ref::mul;
using ref::scale;

// C[m,n] += A[m,k] * B[k,n], all row-major. The inner accumulation is a
// streaming axpy over rows of B, which the dispatcher vectorizes.
template <class T>
inline void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av != T(0)) axpy(av, b + p * n, crow, n);
    }
  }
}

// C[m,n] += A^T where A is [k,m] row-major: C += A(t) * B, used by backward
// passes. Equivalent to gemm_acc on the transposed view without materializing it.
template <class T>
inline void gemm_at_b_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                          std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av != T(0)) axpy(av, brow, c + i * n, n);
    }
  }
}

// C[m,k] += A[m,n] * B^T where B is [k,n] row-major: C += A * B(t).
template <class T>
inline void gemm_a_bt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t n,
                          std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (std::size_t j = 0; j < k; ++j) crow[j] += dot(arow, b + j * n, n);
  }
}

}  // namespace cfdbench::simd

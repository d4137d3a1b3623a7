#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace cfdbench::fft {

template <class T>
using cvec = std::vector<std::complex<T>>;

inline bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

// In-place iterative radix-2 Cooley-Tukey on a strided view.
template <class T>
void fft_pow2(std::complex<T>* x, std::size_t n, std::size_t stride, bool inverse) {
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i * stride], x[j * stride]);
  }
  const T sign = inverse ? T(1) : T(-1);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const T ang = sign * T(2) * T(M_PI) / T(len);
    const std::complex<T> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<T> w(1);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<T>& u = x[(i + k) * stride];
        std::complex<T>& v = x[(i + k + len / 2) * stride];
        const std::complex<T> t = v * w;
        v = u - t;
        u = u + t;
        w *= wlen;
      }
    }
  }
}

// O(n^2) transform for non-power-of-2 extents (66-row padded grids etc.).
template <class T>
void dft_naive(std::complex<T>* x, std::size_t n, std::size_t stride, bool inverse) {
  const T sign = inverse ? T(1) : T(-1);
  cvec<T> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<T> acc(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T ang = sign * T(2) * T(M_PI) * T(k * j % n) / T(n);
      acc += x[j * stride] * std::complex<T>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  for (std::size_t k = 0; k < n; ++k) x[k * stride] = out[k];
}

template <class T>
void transform_1d(std::complex<T>* x, std::size_t n, std::size_t stride, bool inverse) {
  if (n <= 1) return;
  if (is_pow2(n))
    fft_pow2(x, n, stride, inverse);
  else
    dft_naive(x, n, stride, inverse);
}

// 2-D transform of a row-major H x W complex grid. The inverse applies the
// 1/(H*W) normalization.
template <class T>
void fft2(cvec<T>& grid, std::size_t h, std::size_t w, bool inverse) {
  for (std::size_t r = 0; r < h; ++r) transform_1d(grid.data() + r * w, w, 1, inverse);
  for (std::size_t c = 0; c < w; ++c) transform_1d(grid.data() + c, h, w, inverse);
  if (inverse) {
    const T scale = T(1) / T(h * w);
    for (auto& z : grid) z *= scale;
  }
}

}  // namespace cfdbench::fft

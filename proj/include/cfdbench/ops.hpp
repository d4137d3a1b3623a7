#pragma once

// Forward kernels with taped adjoints: the primitives every baseline
// architecture is assembled from. All kernels are pure; adjoints are
// recorded only when an input has requires_grad (or already carries a
// recorded history, tracked via Tensor::requires_grad propagation).

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "cfdbench/errors.hpp"
#include "cfdbench/fft.hpp"
#include "cfdbench/simd.hpp"
#include "cfdbench/tape.hpp"
#include "cfdbench/tensor.hpp"

namespace cfdbench::ops {

enum class Act { ReLU, Tanh, GELU };

namespace detail {

template <class T>
inline bool track(Tape<T>* tape, std::initializer_list<TensorPtr<T>> ins) {
  if (!tape) return false;
  for (const auto& t : ins)
    if (t && t->requires_grad) return true;
  return false;
}

template <class T>
inline void accum(const TensorPtr<T>& t, const std::vector<T>& delta) {
  t->ensure_grad();
  simd::axpy(T(1), delta.data(), t->g.data(), delta.size());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear algebra
// ---------------------------------------------------------------------------

template <class T>
TensorPtr<T> matmul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->ndim() != 2 || b->ndim() != 2 || a->dim(1) != b->dim(0))
    throw DimensionError("matmul shape mismatch: " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
  const std::size_t m = a->dim(0), k = a->dim(1), n = b->dim(1);
  auto out = make_tensor<T>({m, n});
  simd::gemm_acc(a->v.data(), b->v.data(), out->v.data(), m, k, n);
  if (detail::track(tape, {a, b})) {
    out->requires_grad = true;
    tape->record([a, b, out, m, k, n]() {
      out->ensure_grad();
      if (a->requires_grad) {
        a->ensure_grad();
        simd::gemm_a_bt_acc(out->g.data(), b->v.data(), a->g.data(), m, n, k);
      }
      if (b->requires_grad) {
        b->ensure_grad();
        simd::gemm_at_b_acc(a->v.data(), out->g.data(), b->g.data(), k, m, n);
      }
    });
  }
  return out;
}

// y[m,n] = x[m,k] * w[k,n] + bias[n]
template <class T>
TensorPtr<T> linear(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w,
                    const TensorPtr<T>& bias) {
  auto out = matmul(tape, x, w);
  if (bias->ndim() != 1 || bias->dim(0) != out->dim(1))
    throw DimensionError("linear bias shape " + shape_str(bias->shape) + " vs out " +
                         shape_str(out->shape));
  const std::size_t m = out->dim(0), n = out->dim(1);
  for (std::size_t i = 0; i < m; ++i)
    simd::axpy(T(1), bias->v.data(), out->v.data() + i * n, n);
  if (detail::track(tape, {bias})) {
    out->requires_grad = true;
    tape->record([bias, out, m, n]() {
      out->ensure_grad();
      bias->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        simd::axpy(T(1), out->g.data() + i * n, bias->g.data(), n);
    });
  }
  return out;
}

template <class T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape)
    throw DimensionError("add shape mismatch: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
  auto out = make_tensor<T>(a->shape);
  simd::add(a->v.data(), b->v.data(), out->v.data(), out->size());
  if (detail::track(tape, {a, b})) {
    out->requires_grad = true;
    tape->record([a, b, out]() {
      out->ensure_grad();
      if (a->requires_grad) detail::accum(a, out->g);
      if (b->requires_grad) detail::accum(b, out->g);
    });
  }
  return out;
}

template <class T>
TensorPtr<T> sub(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape)
    throw DimensionError("sub shape mismatch: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
  auto out = make_tensor<T>(a->shape);
  for (std::size_t i = 0; i < out->size(); ++i) out->v[i] = a->v[i] - b->v[i];
  if (detail::track(tape, {a, b})) {
    out->requires_grad = true;
    tape->record([a, b, out]() {
      out->ensure_grad();
      if (a->requires_grad) detail::accum(a, out->g);
      if (b->requires_grad) {
        b->ensure_grad();
        simd::axpy(T(-1), out->g.data(), b->g.data(), out->size());
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> mul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape)
    throw DimensionError("mul shape mismatch: " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
  auto out = make_tensor<T>(a->shape);
  simd::mul(a->v.data(), b->v.data(), out->v.data(), out->size());
  if (detail::track(tape, {a, b})) {
    out->requires_grad = true;
    tape->record([a, b, out]() {
      out->ensure_grad();
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < out->size(); ++i) a->g[i] += out->g[i] * b->v[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < out->size(); ++i) b->g[i] += out->g[i] * a->v[i];
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> scale(Tape<T>* tape, const TensorPtr<T>& a, T c) {
  auto out = make_tensor<T>(a->shape);
  for (std::size_t i = 0; i < out->size(); ++i) out->v[i] = c * a->v[i];
  if (detail::track(tape, {a})) {
    out->requires_grad = true;
    tape->record([a, out, c]() {
      out->ensure_grad();
      a->ensure_grad();
      simd::axpy(c, out->g.data(), a->g.data(), out->size());
    });
  }
  return out;
}

// out = x + s, s a trainable scalar broadcast over all elements.
template <class T>
TensorPtr<T> add_scalar(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& s) {
  if (s->size() != 1) throw DimensionError("add_scalar expects scalar, got " + shape_str(s->shape));
  auto out = make_tensor<T>(x->shape);
  for (std::size_t i = 0; i < out->size(); ++i) out->v[i] = x->v[i] + s->v[0];
  if (detail::track(tape, {x, s})) {
    out->requires_grad = true;
    tape->record([x, s, out]() {
      out->ensure_grad();
      if (x->requires_grad) detail::accum(x, out->g);
      if (s->requires_grad) {
        s->ensure_grad();
        for (std::size_t i = 0; i < out->size(); ++i) s->g[0] += out->g[i];
      }
    });
  }
  return out;
}

// Column concatenation of row batches with single-row broadcast: a [Ra,ka]
// and b [Rb,kb] with Ra,Rb in {1,N} produce [N, ka+kb].
template <class T>
TensorPtr<T> concat_cols(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->ndim() != 2 || b->ndim() != 2)
    throw DimensionError("concat_cols expects 2-D inputs, got " + shape_str(a->shape) + " and " +
                         shape_str(b->shape));
  const std::size_t ra = a->dim(0), rb = b->dim(0), ka = a->dim(1), kb = b->dim(1);
  const std::size_t n = std::max(ra, rb);
  if ((ra != n && ra != 1) || (rb != n && rb != 1))
    throw DimensionError("concat_cols row counts must match or be 1: " + shape_str(a->shape) +
                         " vs " + shape_str(b->shape));
  auto out = make_tensor<T>({n, ka + kb});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a->v.data() + (ra == 1 ? 0 : i) * ka, ka, out->v.data() + i * (ka + kb));
    std::copy_n(b->v.data() + (rb == 1 ? 0 : i) * kb, kb, out->v.data() + i * (ka + kb) + ka);
  }
  if (detail::track(tape, {a, b})) {
    out->requires_grad = true;
    tape->record([a, b, out, ra, rb, ka, kb, n]() {
      out->ensure_grad();
      if (a->requires_grad) a->ensure_grad();
      if (b->requires_grad) b->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const T* go = out->g.data() + i * (ka + kb);
        if (a->requires_grad)
          simd::axpy(T(1), go, a->g.data() + (ra == 1 ? 0 : i) * ka, ka);
        if (b->requires_grad)
          simd::axpy(T(1), go + ka, b->g.data() + (rb == 1 ? 0 : i) * kb, kb);
      }
    });
  }
  return out;
}

// Same data, new shape (element count preserved); gradient passes through.
template <class T>
TensorPtr<T> reshape(Tape<T>* tape, const TensorPtr<T>& x, Shape s) {
  if (shape_numel(s) != x->size())
    throw DimensionError("reshape " + shape_str(x->shape) + " -> " + shape_str(s) +
                         " changes the element count");
  auto out = make_tensor<T>(std::move(s), x->v);
  if (detail::track(tape, {x})) {
    out->requires_grad = true;
    tape->record([x, out]() {
      out->ensure_grad();
      detail::accum(x, out->g);
    });
  }
  return out;
}

template <class T>
TensorPtr<T> sum_all(Tape<T>* tape, const TensorPtr<T>& x) {
  auto out = make_tensor<T>({1});
  T acc = T(0);
  for (T v : x->v) acc += v;
  out->v[0] = acc;
  if (detail::track(tape, {x})) {
    out->requires_grad = true;
    tape->record([x, out]() {
      out->ensure_grad();
      x->ensure_grad();
      for (std::size_t i = 0; i < x->size(); ++i) x->g[i] += out->g[0];
    });
  }
  return out;
}

template <class T>
TensorPtr<T> mean_all(Tape<T>* tape, const TensorPtr<T>& x) {
  return scale(tape, sum_all(tape, x), T(1) / T(x->size()));
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
inline T act_fwd(Act kind, T z) {
  switch (kind) {
    case Act::ReLU:
      return z > T(0) ? z : T(0);
    case Act::Tanh:
      return std::tanh(z);
    case Act::GELU:
      return T(0.5) * z * (T(1) + std::erf(z / std::sqrt(T(2))));
  }
  return z;
}

template <class T>
inline T act_deriv(Act kind, T z) {
  switch (kind) {
    case Act::ReLU:
      return z > T(0) ? T(1) : T(0);
    case Act::Tanh: {
      const T th = std::tanh(z);
      return T(1) - th * th;
    }
    case Act::GELU: {
      const T phi = std::exp(-z * z / T(2)) / std::sqrt(T(2) * T(M_PI));
      return T(0.5) * (T(1) + std::erf(z / std::sqrt(T(2)))) + z * phi;
    }
  }
  return T(1);
}

}  // namespace detail

// Elementwise nonlinearity. With pre_normalize the input is standardized
// (zero mean, unit variance, eps-guarded) over the last axis first.
template <class T>
TensorPtr<T> activation(Tape<T>* tape, const TensorPtr<T>& x, Act kind, bool pre_normalize = false,
                        T eps = T(1e-5)) {
  auto out = make_tensor<T>(x->shape);
  const std::size_t n = x->size();
  if (!pre_normalize) {
    if (kind == Act::ReLU) {
      simd::relu(x->v.data(), out->v.data(), n);
    } else {
      for (std::size_t i = 0; i < n; ++i) out->v[i] = detail::act_fwd(kind, x->v[i]);
    }
    if (detail::track(tape, {x})) {
      out->requires_grad = true;
      tape->record([x, out, kind]() {
        out->ensure_grad();
        x->ensure_grad();
        for (std::size_t i = 0; i < x->size(); ++i)
          x->g[i] += out->g[i] * detail::act_deriv(kind, x->v[i]);
      });
    }
    return out;
  }

  // standardized variant: rows are the leading axes, features the last axis
  const std::size_t f = x->shape.back();
  const std::size_t rows = n / f;
  auto z = std::make_shared<std::vector<T>>(n);       // standardized pre-activation
  auto inv_sd = std::make_shared<std::vector<T>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x->v.data() + r * f;
    T mean = T(0);
    for (std::size_t j = 0; j < f; ++j) mean += xr[j];
    mean /= T(f);
    T var = T(0);
    for (std::size_t j = 0; j < f; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(f);
    const T isd = T(1) / std::sqrt(var + eps);
    (*inv_sd)[r] = isd;
    for (std::size_t j = 0; j < f; ++j) {
      const T zj = (xr[j] - mean) * isd;
      (*z)[r * f + j] = zj;
      out->v[r * f + j] = detail::act_fwd(kind, zj);
    }
  }
  if (detail::track(tape, {x})) {
    out->requires_grad = true;
    tape->record([x, out, z, inv_sd, kind, f, rows]() {
      out->ensure_grad();
      x->ensure_grad();
      std::vector<T> dz(f);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* zr = z->data() + r * f;
        T sum_dz = T(0), sum_dz_z = T(0);
        for (std::size_t j = 0; j < f; ++j) {
          dz[j] = out->g[r * f + j] * detail::act_deriv(kind, zr[j]);
          sum_dz += dz[j];
          sum_dz_z += dz[j] * zr[j];
        }
        const T isd = (*inv_sd)[r];
        for (std::size_t j = 0; j < f; ++j)
          x->g[r * f + j] += isd * (dz[j] - sum_dz / T(f) - zr[j] * sum_dz_z / T(f));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions and pooling (NCHW; 3-D inputs are treated as batch 1)
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  std::size_t n, c, h, w;
  bool batched;
};

template <class T>
inline ConvDims image_dims(const TensorPtr<T>& x, const char* who) {
  if (x->ndim() == 3) return {1, x->dim(0), x->dim(1), x->dim(2), false};
  if (x->ndim() == 4) return {x->dim(0), x->dim(1), x->dim(2), x->dim(3), true};
  throw DimensionError(std::string(who) + " expects [C,H,W] or [N,C,H,W], got " +
                       shape_str(x->shape));
}

}  // namespace detail

// Cross-correlation with zero padding. kernel [Co,Ci,k,k], k odd.
// Output H' = H + 2*padding - k + 1.
template <class T>
TensorPtr<T> conv2d(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& kernel,
                    std::size_t padding, const TensorPtr<T>& bias = nullptr) {
  const auto d = detail::image_dims(x, "conv2d");
  if (kernel->ndim() != 4 || kernel->dim(2) != kernel->dim(3))
    throw DimensionError("conv2d kernel must be [Co,Ci,k,k], got " + shape_str(kernel->shape));
  const std::size_t co = kernel->dim(0), ci = kernel->dim(1), k = kernel->dim(2);
  if (k % 2 == 0) throw ConfigError("conv2d kernel size must be odd, got " + std::to_string(k));
  if (ci != d.c)
    throw DimensionError("conv2d channel mismatch: input " + shape_str(x->shape) + " kernel " +
                         shape_str(kernel->shape));
  if (d.h + 2 * padding < k || d.w + 2 * padding < k)
    throw DimensionError("conv2d kernel " + std::to_string(k) + " larger than padded input " +
                         shape_str(x->shape));
  const std::size_t ho = d.h + 2 * padding - k + 1, wo = d.w + 2 * padding - k + 1;
  auto out = d.batched ? make_tensor<T>({d.n, co, ho, wo}) : make_tensor<T>({co, ho, wo});

  // row-wise accumulation: each (ky,kx) tap is an axpy over the overlap of
  // an input row with an output row
  const auto run = [&](const T* xv, T* yv) {
    for (std::size_t oc = 0; oc < co; ++oc) {
      T* ybase = yv + oc * ho * wo;
      if (bias) {
        const T b = bias->v[oc];
        for (std::size_t i = 0; i < ho * wo; ++i) ybase[i] = b;
      }
      for (std::size_t ic = 0; ic < ci; ++ic) {
        const T* xbase = xv + ic * d.h * d.w;
        const T* kbase = kernel->v.data() + (oc * ci + ic) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T wv = kbase[ky * k + kx];
            if (wv == T(0)) continue;
            // output row oy reads input row iy = oy + ky - padding
            for (std::size_t oy = 0; oy < ho; ++oy) {
              const long iy = static_cast<long>(oy + ky) - static_cast<long>(padding);
              if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
              const long shift = static_cast<long>(kx) - static_cast<long>(padding);
              const std::size_t ox0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
              const long ix0 = static_cast<long>(ox0) + shift;
              const long span = std::min<long>(static_cast<long>(wo) - static_cast<long>(ox0),
                                               static_cast<long>(d.w) - ix0);
              if (span <= 0) continue;
              simd::axpy(wv, xbase + iy * d.w + ix0, ybase + oy * wo + ox0,
                         static_cast<std::size_t>(span));
            }
          }
        }
      }
    }
  };
  for (std::size_t n = 0; n < d.n; ++n)
    run(x->v.data() + n * d.c * d.h * d.w, out->v.data() + n * co * ho * wo);

  if (detail::track(tape, {x, kernel, bias})) {
    out->requires_grad = true;
    tape->record([x, kernel, bias, out, d, co, ci, k, padding, ho, wo]() {
      out->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      if (kernel->requires_grad) kernel->ensure_grad();
      if (bias && bias->requires_grad) bias->ensure_grad();
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* gy = out->g.data() + n * co * ho * wo;
        const T* xv = x->v.data() + n * d.c * d.h * d.w;
        T* gx = x->requires_grad ? x->g.data() + n * d.c * d.h * d.w : nullptr;
        for (std::size_t oc = 0; oc < co; ++oc) {
          const T* gybase = gy + oc * ho * wo;
          if (bias && bias->requires_grad)
            for (std::size_t i = 0; i < ho * wo; ++i) bias->g[oc] += gybase[i];
          for (std::size_t ic = 0; ic < ci; ++ic) {
            const T* xbase = xv + ic * d.h * d.w;
            const std::size_t koff = (oc * ci + ic) * k * k;
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const T wv = kernel->v[koff + ky * k + kx];
                T gw = T(0);
                for (std::size_t oy = 0; oy < ho; ++oy) {
                  const long iy = static_cast<long>(oy + ky) - static_cast<long>(padding);
                  if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
                  const long shift = static_cast<long>(kx) - static_cast<long>(padding);
                  const std::size_t ox0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
                  const long ix0 = static_cast<long>(ox0) + shift;
                  const long span = std::min<long>(static_cast<long>(wo) - static_cast<long>(ox0),
                                                   static_cast<long>(d.w) - ix0);
                  if (span <= 0) continue;
                  if (kernel->requires_grad)
                    gw += simd::dot(gybase + oy * wo + ox0, xbase + iy * d.w + ix0,
                                    static_cast<std::size_t>(span));
                  if (gx)
                    simd::axpy(wv, gybase + oy * wo + ox0, gx + ic * d.h * d.w + iy * d.w + ix0,
                               static_cast<std::size_t>(span));
                }
                if (kernel->requires_grad) kernel->g[koff + ky * k + kx] += gw;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// Transposed convolution, kernel [Ci,Co,s,s], stride s (U-Net upsampling).
template <class T>
TensorPtr<T> conv_transpose2d(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& kernel,
                              const TensorPtr<T>& bias) {
  const auto d = detail::image_dims(x, "conv_transpose2d");
  if (kernel->ndim() != 4 || kernel->dim(2) != kernel->dim(3))
    throw DimensionError("conv_transpose2d kernel must be [Ci,Co,s,s]");
  const std::size_t ci = kernel->dim(0), co = kernel->dim(1), s = kernel->dim(2);
  if (ci != d.c) throw DimensionError("conv_transpose2d channel mismatch");
  const std::size_t ho = d.h * s, wo = d.w * s;
  auto out = d.batched ? make_tensor<T>({d.n, co, ho, wo}) : make_tensor<T>({co, ho, wo});
  for (std::size_t n = 0; n < d.n; ++n) {
    T* yv = out->v.data() + n * co * ho * wo;
    const T* xv = x->v.data() + n * ci * d.h * d.w;
    for (std::size_t oc = 0; oc < co; ++oc) {
      const T b = bias ? bias->v[oc] : T(0);
      T* ybase = yv + oc * ho * wo;
      for (std::size_t i = 0; i < ho * wo; ++i) ybase[i] = b;
      for (std::size_t ic = 0; ic < ci; ++ic) {
        const T* xbase = xv + ic * d.h * d.w;
        const T* kbase = kernel->v.data() + (ic * co + oc) * s * s;
        for (std::size_t iy = 0; iy < d.h; ++iy)
          for (std::size_t dy = 0; dy < s; ++dy)
            for (std::size_t dx = 0; dx < s; ++dx) {
              const T wv = kbase[dy * s + dx];
              T* yrow = ybase + (iy * s + dy) * wo + dx;
              const T* xrow = xbase + iy * d.w;
              for (std::size_t ix = 0; ix < d.w; ++ix) yrow[ix * s] += wv * xrow[ix];
            }
      }
    }
  }
  if (detail::track(tape, {x, kernel, bias})) {
    out->requires_grad = true;
    tape->record([x, kernel, bias, out, d, ci, co, s, ho, wo]() {
      out->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      if (kernel->requires_grad) kernel->ensure_grad();
      if (bias && bias->requires_grad) bias->ensure_grad();
      for (std::size_t n = 0; n < d.n; ++n) {
        const T* gy = out->g.data() + n * co * ho * wo;
        const T* xv = x->v.data() + n * ci * d.h * d.w;
        T* gx = x->requires_grad ? x->g.data() + n * ci * d.h * d.w : nullptr;
        for (std::size_t oc = 0; oc < co; ++oc) {
          const T* gybase = gy + oc * ho * wo;
          if (bias && bias->requires_grad)
            for (std::size_t i = 0; i < ho * wo; ++i) bias->g[oc] += gybase[i];
          for (std::size_t ic = 0; ic < ci; ++ic) {
            const std::size_t koff = (ic * co + oc) * s * s;
            for (std::size_t iy = 0; iy < d.h; ++iy)
              for (std::size_t dy = 0; dy < s; ++dy)
                for (std::size_t dx = 0; dx < s; ++dx) {
                  const T wv = kernel->v[koff + dy * s + dx];
                  const T* gyrow = gybase + (iy * s + dy) * wo + dx;
                  const T* xrow = xv + ic * d.h * d.w + iy * d.w;
                  T gw = T(0);
                  for (std::size_t ix = 0; ix < d.w; ++ix) {
                    const T gyv = gyrow[ix * s];
                    gw += gyv * xrow[ix];
                    if (gx) gx[ic * d.h * d.w + iy * d.w + ix] += wv * gyv;
                  }
                  if (kernel->requires_grad) kernel->g[koff + dy * s + dx] += gw;
                }
          }
        }
      }
    });
  }
  return out;
}

template <class T>
TensorPtr<T> maxpool2d(Tape<T>* tape, const TensorPtr<T>& x, std::size_t s = 2) {
  const auto d = detail::image_dims(x, "maxpool2d");
  if (d.h % s || d.w % s)
    throw ConfigError("maxpool2d input " + shape_str(x->shape) + " not divisible by " +
                      std::to_string(s));
  const std::size_t ho = d.h / s, wo = d.w / s;
  auto out = d.batched ? make_tensor<T>({d.n, d.c, ho, wo}) : make_tensor<T>({d.c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out->size());
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    const T* xb = x->v.data() + nc * d.h * d.w;
    T* yb = out->v.data() + nc * ho * wo;
    std::size_t* ab = argmax->data() + nc * ho * wo;
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T best = xb[oy * s * d.w + ox * s];
        std::size_t bi = oy * s * d.w + ox * s;
        for (std::size_t dy = 0; dy < s; ++dy)
          for (std::size_t dx = 0; dx < s; ++dx) {
            const std::size_t idx = (oy * s + dy) * d.w + ox * s + dx;
            if (xb[idx] > best) {
              best = xb[idx];
              bi = idx;
            }
          }
        yb[oy * wo + ox] = best;
        ab[oy * wo + ox] = nc * d.h * d.w + bi;
      }
  }
  if (detail::track(tape, {x})) {
    out->requires_grad = true;
    tape->record([x, out, argmax]() {
      out->ensure_grad();
      x->ensure_grad();
      for (std::size_t i = 0; i < out->size(); ++i) x->g[(*argmax)[i]] += out->g[i];
    });
  }
  return out;
}

// Batch normalization over (N,H,W) per channel, affine, batch statistics in
// both training and inference.
template <class T>
TensorPtr<T> batchnorm2d(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                         const TensorPtr<T>& beta, T eps = T(1e-5)) {
  const auto d = detail::image_dims(x, "batchnorm2d");
  if (gamma->size() != d.c || beta->size() != d.c)
    throw DimensionError("batchnorm2d affine params must be [C]");
  auto out = make_tensor<T>(x->shape);
  const std::size_t hw = d.h * d.w, m = d.n * hw;
  auto xhat = std::make_shared<std::vector<T>>(x->size());
  auto inv_sd = std::make_shared<std::vector<T>>(d.c);
  for (std::size_t c = 0; c < d.c; ++c) {
    T mean = T(0);
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* xb = x->v.data() + (n * d.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) mean += xb[i];
    }
    mean /= T(m);
    T var = T(0);
    for (std::size_t n = 0; n < d.n; ++n) {
      const T* xb = x->v.data() + (n * d.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) var += (xb[i] - mean) * (xb[i] - mean);
    }
    var /= T(m);
    const T isd = T(1) / std::sqrt(var + eps);
    (*inv_sd)[c] = isd;
    const T gm = gamma->v[c], bt = beta->v[c];
    for (std::size_t n = 0; n < d.n; ++n) {
      const std::size_t off = (n * d.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = (x->v[off + i] - mean) * isd;
        (*xhat)[off + i] = xh;
        out->v[off + i] = gm * xh + bt;
      }
    }
  }
  if (detail::track(tape, {x, gamma, beta})) {
    out->requires_grad = true;
    tape->record([x, gamma, beta, out, xhat, inv_sd, d, hw, m]() {
      out->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      if (gamma->requires_grad) gamma->ensure_grad();
      if (beta->requires_grad) beta->ensure_grad();
      for (std::size_t c = 0; c < d.c; ++c) {
        T sum_dy = T(0), sum_dy_xh = T(0);
        for (std::size_t n = 0; n < d.n; ++n) {
          const std::size_t off = (n * d.c + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            sum_dy += out->g[off + i];
            sum_dy_xh += out->g[off + i] * (*xhat)[off + i];
          }
        }
        if (beta->requires_grad) beta->g[c] += sum_dy;
        if (gamma->requires_grad) gamma->g[c] += sum_dy_xh;
        if (x->requires_grad) {
          const T gm = gamma->v[c], isd = (*inv_sd)[c];
          for (std::size_t n = 0; n < d.n; ++n) {
            const std::size_t off = (n * d.c + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              const T dxh = out->g[off + i] * gm;
              x->g[off + i] +=
                  isd * (dxh - sum_dy * gm / T(m) - (*xhat)[off + i] * sum_dy_xh * gm / T(m));
            }
          }
        }
      }
    });
  }
  return out;
}

// Channel concatenation ([C,H,W] axis 0, [N,C,H,W] axis 1).
template <class T>
TensorPtr<T> concat_channels(Tape<T>* tape, const std::vector<TensorPtr<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_channels on empty list");
  const auto d0 = detail::image_dims(parts[0], "concat_channels");
  std::size_t ctot = 0;
  for (const auto& p : parts) {
    const auto d = detail::image_dims(p, "concat_channels");
    if (d.n != d0.n || d.h != d0.h || d.w != d0.w)
      throw DimensionError("concat_channels extent mismatch");
    ctot += d.c;
  }
  auto out = d0.batched ? make_tensor<T>({d0.n, ctot, d0.h, d0.w})
                        : make_tensor<T>({ctot, d0.h, d0.w});
  const std::size_t hw = d0.h * d0.w;
  for (std::size_t n = 0; n < d0.n; ++n) {
    std::size_t coff = 0;
    for (const auto& p : parts) {
      const std::size_t pc = p->ndim() == 3 ? p->dim(0) : p->dim(1);
      std::copy_n(p->v.data() + n * pc * hw, pc * hw, out->v.data() + (n * ctot + coff) * hw);
      coff += pc;
    }
  }
  bool any = false;
  for (const auto& p : parts) any = any || p->requires_grad;
  if (tape && any) {
    out->requires_grad = true;
    tape->record([parts, out, d0, ctot, hw]() {
      out->ensure_grad();
      for (std::size_t n = 0; n < d0.n; ++n) {
        std::size_t coff = 0;
        for (const auto& p : parts) {
          const std::size_t pc = p->ndim() == 3 ? p->dim(0) : p->dim(1);
          if (p->requires_grad) {
            p->ensure_grad();
            simd::axpy(T(1), out->g.data() + (n * ctot + coff) * hw, p->g.data() + n * pc * hw,
                       pc * hw);
          }
          coff += pc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Truncated spectral convolution
// ---------------------------------------------------------------------------

// Per-mode complex channel mix over the lowest m x m retained modes of the
// 2-D spectrum; the transfer function is Hermitian-completed (mirror modes
// carry the conjugate weights, self-conjugate modes the real part) so the
// operator is exactly a real circular convolution. All other modes zeroed.
template <class T>
TensorPtr<T> spectral_conv(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& w_re,
                           const TensorPtr<T>& w_im, std::size_t modes) {
  const auto d = detail::image_dims(x, "spectral_conv");
  if (w_re->ndim() != 4 || w_re->shape != w_im->shape)
    throw DimensionError("spectral weights must be matching [Co,Ci,m,m] pairs");
  const std::size_t co = w_re->dim(0), ci = w_re->dim(1), m = w_re->dim(2);
  if (w_re->dim(3) != m) throw DimensionError("spectral weights must be square in modes");
  if (ci != d.c) throw DimensionError("spectral_conv channel mismatch");
  if (m != modes) throw ConfigError("spectral weight extent disagrees with modes");
  if (m > d.h / 2 + 1 || m > d.w)
    throw ConfigError("modes " + std::to_string(m) + " exceed grid capacity " +
                      std::to_string(d.h) + "x" + std::to_string(d.w));

  using C = std::complex<T>;
  const std::size_t hw = d.h * d.w;
  auto out = d.batched ? make_tensor<T>({d.n, co, d.h, d.w}) : make_tensor<T>({co, d.h, d.w});
  // cached spectra for the backward pass
  auto xhat_all = std::make_shared<std::vector<C>>(d.n * ci * hw);

  for (std::size_t n = 0; n < d.n; ++n) {
    C* xhat = xhat_all->data() + n * ci * hw;
    for (std::size_t c = 0; c < ci; ++c) {
      fft::cvec<T> grid(hw);
      const T* xb = x->v.data() + (n * ci + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) grid[i] = C(xb[i], T(0));
      fft::fft2(grid, d.h, d.w, false);
      std::copy(grid.begin(), grid.end(), xhat + c * hw);
    }
    for (std::size_t oc = 0; oc < co; ++oc) {
      fft::cvec<T> yhat(hw, C(0));
      for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = 0; b < m; ++b) {
          const std::size_t a2 = (d.h - a) % d.h, b2 = (d.w - b) % d.w;
          const bool self = (a2 == a && b2 == b);
          C s(0);
          for (std::size_t c = 0; c < ci; ++c) {
            const C wv(w_re->v[((oc * ci + c) * m + a) * m + b],
                       w_im->v[((oc * ci + c) * m + a) * m + b]);
            const C xv = xhat[c * hw + a * d.w + b];
            s += self ? C(wv.real(), T(0)) * xv : wv * xv;
          }
          yhat[a * d.w + b] += s;
          if (!self) yhat[a2 * d.w + b2] += std::conj(s);
        }
      }
      fft::fft2(yhat, d.h, d.w, true);
      T* yb = out->v.data() + (n * co + oc) * hw;
      for (std::size_t i = 0; i < hw; ++i) yb[i] = yhat[i].real();
    }
  }

  if (detail::track(tape, {x, w_re, w_im})) {
    out->requires_grad = true;
    tape->record([x, w_re, w_im, out, xhat_all, d, co, ci, m, hw]() {
      out->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      if (w_re->requires_grad) w_re->ensure_grad();
      if (w_im->requires_grad) w_im->ensure_grad();
      const T inv_hw = T(1) / T(hw);
      for (std::size_t n = 0; n < d.n; ++n) {
        const C* xhat = xhat_all->data() + n * ci * hw;
        // spectra of the output adjoints
        std::vector<fft::cvec<T>> ghat(co);
        for (std::size_t oc = 0; oc < co; ++oc) {
          ghat[oc].assign(hw, C(0));
          const T* gb = out->g.data() + (n * co + oc) * hw;
          for (std::size_t i = 0; i < hw; ++i) ghat[oc][i] = C(gb[i], T(0));
          fft::fft2(ghat[oc], d.h, d.w, false);
        }
        std::vector<fft::cvec<T>> dxhat;
        if (x->requires_grad) dxhat.assign(ci, fft::cvec<T>(hw, C(0)));
        for (std::size_t a = 0; a < m; ++a) {
          for (std::size_t b = 0; b < m; ++b) {
            const std::size_t a2 = (d.h - a) % d.h, b2 = (d.w - b) % d.w;
            const bool self = (a2 == a && b2 == b);
            const std::size_t k1 = a * d.w + b, k2 = a2 * d.w + b2;
            for (std::size_t oc = 0; oc < co; ++oc) {
              const C g1 = ghat[oc][k1];
              const C g2 = self ? C(0) : ghat[oc][k2];
              for (std::size_t c = 0; c < ci; ++c) {
                const std::size_t wi = ((oc * ci + c) * m + a) * m + b;
                const C wv(w_re->v[wi], w_im->v[wi]);
                if (w_re->requires_grad || w_im->requires_grad) {
                  const C A = inv_hw * xhat[c * hw + k1] * std::conj(g1);
                  if (self) {
                    if (w_re->requires_grad) w_re->g[wi] += A.real();
                  } else {
                    const C B = inv_hw * xhat[c * hw + k2] * std::conj(g2);
                    if (w_re->requires_grad) w_re->g[wi] += A.real() + B.real();
                    if (w_im->requires_grad) w_im->g[wi] += B.imag() - A.imag();
                  }
                }
                if (x->requires_grad) {
                  if (self) {
                    dxhat[c][k1] += C(wv.real(), T(0)) * g1;
                  } else {
                    dxhat[c][k1] += std::conj(wv) * g1;
                    dxhat[c][k2] += wv * g2;
                  }
                }
              }
            }
          }
        }
        if (x->requires_grad) {
          for (std::size_t c = 0; c < ci; ++c) {
            fft::fft2(dxhat[c], d.h, d.w, true);
            T* gx = x->g.data() + (n * ci + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) gx[i] += dxhat[c][i].real();
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// sum((pred-label)^2) / max(sum(label^2), eps); label treated as constant.
template <class T>
TensorPtr<T> nmse(Tape<T>* tape, const TensorPtr<T>& pred, const TensorPtr<T>& label,
                  T eps = T(1e-12)) {
  if (pred->shape != label->shape)
    throw DimensionError("nmse shape mismatch: " + shape_str(pred->shape) + " vs " +
                         shape_str(label->shape));
  T num = T(0), den = T(0);
  for (std::size_t i = 0; i < pred->size(); ++i) {
    const T dv = pred->v[i] - label->v[i];
    num += dv * dv;
    den += label->v[i] * label->v[i];
  }
  const T d = std::max(den, eps);
  auto out = scalar_tensor(num / d);
  if (detail::track(tape, {pred})) {
    out->requires_grad = true;
    tape->record([pred, label, out, d]() {
      out->ensure_grad();
      pred->ensure_grad();
      const T c = T(2) * out->g[0] / d;
      for (std::size_t i = 0; i < pred->size(); ++i)
        pred->g[i] += c * (pred->v[i] - label->v[i]);
    });
  }
  return out;
}

}  // namespace cfdbench::ops

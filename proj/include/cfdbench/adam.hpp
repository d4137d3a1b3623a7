#pragma once

#include <cstddef>
#include <vector>

#include "cfdbench/errors.hpp"
#include "cfdbench/simd.hpp"
#include "cfdbench/tensor.hpp"

namespace cfdbench {

// First/second-moment state for one parameter tensor.
template <class T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::size_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update of `param` from its gradient buffer.
template <class T>
void adam_step(TensorPtr<T>& param, AdamState<T>& state, T lr, const AdamConfig& cfg = {}) {
  if (state.m.size() != param->size() || state.v.size() != param->size())
    throw DimensionError("adam state size " + std::to_string(state.m.size()) +
                         " does not match parameter " + shape_str(param->shape));
  if (param->g.size() != param->size())
    throw DimensionError("adam_step on parameter without gradient: " + shape_str(param->shape));
  ++state.step;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T bc1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(state.step)));
  const T bc2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(state.step)));
  simd::adam_update(param->v.data(), param->g.data(), state.m.data(), state.v.data(),
                    param->size(), lr, b1, b2, static_cast<T>(cfg.eps), bc1, bc2);
}

}  // namespace cfdbench

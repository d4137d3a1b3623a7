#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cfdbench/errors.hpp"

namespace cfdbench {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major array with an optional same-shape gradient buffer.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> v;
  std::vector<T> g;  // empty until a backward pass reaches this tensor
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), v(shape_numel(shape), fill) {}

  std::size_t size() const { return v.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t ndim() const { return shape.size(); }

  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), T(0));
  }
  void zero_grad() { std::fill(g.begin(), g.end(), T(0)); }

  bool finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }
};

template <class T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <class T>
TensorPtr<T> make_tensor(Shape s, T fill = T(0)) {
  return std::make_shared<Tensor<T>>(std::move(s), fill);
}

template <class T>
TensorPtr<T> make_tensor(Shape s, std::vector<T> values) {
  auto t = std::make_shared<Tensor<T>>();
  t->shape = std::move(s);
  t->v = std::move(values);
  if (t->v.size() != shape_numel(t->shape))
    throw DimensionError("tensor values length " + std::to_string(t->v.size()) +
                         " does not match shape " + shape_str(t->shape));
  return t;
}

template <class T>
TensorPtr<T> scalar_tensor(T value) {
  return make_tensor<T>({1}, std::vector<T>{value});
}

// He-style uniform fan-in init, seed-controlled.
template <class T>
TensorPtr<T> init_uniform_fan_in(Shape s, std::size_t fan_in, std::mt19937_64& rng) {
  auto t = make_tensor<T>(std::move(s));
  const double bound = std::sqrt(6.0 / std::max<std::size_t>(fan_in, 1));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : t->v) x = static_cast<T>(dist(rng));
  t->requires_grad = true;
  return t;
}

}  // namespace cfdbench

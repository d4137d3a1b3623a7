#pragma once

#include <functional>
#include <vector>

#include "cfdbench/errors.hpp"
#include "cfdbench/tensor.hpp"

namespace cfdbench {

// Ordered record of executed operations. Each entry replays the adjoint of
// one forward op; backward() visits them in exact reverse execution order,
// each exactly once. A tape is confined to one worker.
template <class T>
class Tape {
 public:
  void record(std::function<void()> adjoint) { ops_.push_back(std::move(adjoint)); }

  std::size_t size() const { return ops_.size(); }
  bool empty() const { return ops_.empty(); }
  void clear() { ops_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and propagates adjoints to every reachable
  // tensor that requires gradients.
  void backward(const TensorPtr<T>& loss) {
    if (loss->size() != 1) throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss->shape));
    if (ops_.empty()) throw ContractError("backward on an empty tape");
    loss->ensure_grad();
    loss->g[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> ops_;
};

}  // namespace cfdbench

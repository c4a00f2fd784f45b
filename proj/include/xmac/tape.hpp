#pragma once

#include <functional>
#include <vector>

#include "xmac/tensor.hpp"

namespace xmac {

/// Records one backward closure per forward op, in execution order.
/// Inputs of a node always precede it, so a single reverse sweep routes
/// gradients correctly; fan-out accumulates because closures add into
/// input gradients instead of overwriting them.
template <typename T>
class TapeT {
 public:
  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

  size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // Seeds d(output)/d(output) = 1 and replays every node exactly once,
  // newest first. Output must be scalar.
  void backward(TensorT<T>& output) {
    if (output.numel() != 1) throw ShapeError("backward: output must be scalar, got " + output.shape_str());
    if (!output.grad) output.set_requires_grad();
    (*output.grad)[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

using Tape = TapeT<float>;

template <typename T>
void backward(TapeT<T>& tape, TensorT<T>& output) {
  tape.backward(output);
}

}  // namespace xmac

#pragma once

#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "xmac/common.hpp"

namespace xmac {

/// Dense row-major tensor participating in reverse-mode autodiff.
/// 4-D activations are laid out [batch, channel, height, width].
/// Data and grad are shared buffers: copying a TensorT copies the handle,
/// not the storage. Ops treat written tensors as immutable.
template <typename T>
struct TensorT {
  std::vector<int64_t> shape;
  std::shared_ptr<std::vector<T>> data;
  std::shared_ptr<std::vector<T>> grad;  // same length as data when present
  bool requires_grad = false;

  TensorT() = default;

  static TensorT zeros(std::vector<int64_t> s) {
    TensorT t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(static_cast<size_t>(numel_of(t.shape)), T(0));
    return t;
  }

  static TensorT full(std::vector<int64_t> s, T v) {
    TensorT t = zeros(std::move(s));
    for (auto& x : *t.data) x = v;
    return t;
  }

  static TensorT from(std::vector<int64_t> s, std::vector<T> values) {
    if (numel_of(s) != static_cast<int64_t>(values.size()))
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape product " + std::to_string(numel_of(s)));
    TensorT t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  static int64_t numel_of(const std::vector<int64_t>& s) {
    int64_t n = 1;
    for (int64_t d : s) {
      if (d < 0) throw ShapeError("negative dimension in shape");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }
  int ndim() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  bool defined() const { return static_cast<bool>(data); }

  T* ptr() { return data->data(); }
  const T* cptr() const { return data->data(); }

  // Allocates the gradient buffer (zeroed) and marks the tensor as a
  // differentiation target.
  TensorT& set_requires_grad() {
    requires_grad = true;
    if (!grad) grad = std::make_shared<std::vector<T>>(data->size(), T(0));
    return *this;
  }

  T* gptr() { return grad->data(); }
  const T* gcptr() const { return grad->data(); }
  bool has_grad() const { return static_cast<bool>(grad); }

  void zero_grad() {
    if (grad)
      for (auto& g : *grad) g = T(0);
  }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor");
    return (*data)[0];
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }
};

template <typename T>
inline void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

using Tensor = TensorT<float>;

}  // namespace xmac

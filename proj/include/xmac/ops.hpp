#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "xmac/common.hpp"
#include "xmac/kernels.hpp"
#include "xmac/rng.hpp"
#include "xmac/tape.hpp"
#include "xmac/tensor.hpp"

// Forward operators with recorded backward rules. Every op takes the tape as
// its first argument; passing nullptr runs the op without recording (pure
// inference). Backward closures add into input gradients, so a tensor feeding
// several consumers accumulates all contributions.

namespace xmac {

namespace detail {

template <typename T>
inline bool want_grad(TapeT<T>* tape, std::initializer_list<const TensorT<T>*> ins) {
  if (!tape) return false;
  for (const auto* t : ins)
    if (t && t->requires_grad) return true;
  return false;
}

template <typename T>
inline void mark_output(TensorT<T>& out, bool taped) {
  if (taped) out.set_requires_grad();
}

}  // namespace detail

/// 2-D convolution, zero padding, NCHW layout.
/// out[n,co] = bias[co] + sum_ci input[n,ci] * kernel[co,ci]
template <typename T>
TensorT<T> conv2d(TapeT<T>* tape, const TensorT<T>& input, const TensorT<T>& kernel,
                  const TensorT<T>* bias, int64_t stride, int64_t padding) {
  if (input.ndim() != 4 || kernel.ndim() != 4)
    throw ShapeError("conv2d: expected 4-D input and kernel, got " + input.shape_str() + " and " +
                     kernel.shape_str());
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  const int64_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t cout = kernel.dim(0), kcin = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kcin != cin)
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels but kernel expects " +
                     std::to_string(kcin));
  if (kh > h + 2 * padding || kw > w + 2 * padding)
    throw ShapeError("conv2d: kernel " + kernel.shape_str() + " larger than padded input " +
                     input.shape_str());
  if (bias && (bias->ndim() != 1 || bias->dim(0) != cout))
    throw ShapeError("conv2d: bias must have shape [" + std::to_string(cout) + "]");
  const int64_t ho = kern::conv_out_dim(h, kh, stride, padding);
  const int64_t wo = kern::conv_out_dim(w, kw, stride, padding);

  TensorT<T> out = TensorT<T>::zeros({n, cout, ho, wo});
  kern::conv2d_forward(out.ptr(), input.cptr(), kernel.cptr(), bias ? bias->cptr() : nullptr, n,
                       cin, h, w, cout, kh, kw, stride, padding, ho, wo, thread_count());

  const bool taped = detail::want_grad(tape, {&input, &kernel, bias});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> in_c = input, k_c = kernel, out_c = out;
    TensorT<T> bias_c = bias ? *bias : TensorT<T>();
    tape->record([=]() mutable {
      const int nt = thread_count();
      if (in_c.requires_grad)
        kern::conv2d_backward_input(in_c.gptr(), out_c.gcptr(), k_c.cptr(), n, cin, h, w, cout, kh,
                                    kw, stride, padding, ho, wo, nt);
      if (k_c.requires_grad || (bias_c.defined() && bias_c.requires_grad))
        kern::conv2d_backward_weights(
            k_c.requires_grad ? k_c.gptr() : nullptr,
            (bias_c.defined() && bias_c.requires_grad) ? bias_c.gptr() : nullptr, out_c.gcptr(),
            in_c.cptr(), n, cin, h, w, cout, kh, kw, stride, padding, ho, wo, nt);
    });
  }
  return out;
}

template <typename T>
TensorT<T> conv2d(TapeT<T>* tape, const TensorT<T>& input, const TensorT<T>& kernel,
                  std::nullptr_t, int64_t stride, int64_t padding) {
  return conv2d(tape, input, kernel, static_cast<const TensorT<T>*>(nullptr), stride, padding);
}

/// Depthwise convolution: kernel [C,1,Kh,Kw], one spatial filter per channel.
template <typename T>
TensorT<T> depthwise_conv2d(TapeT<T>* tape, const TensorT<T>& input, const TensorT<T>& kernel,
                            int64_t stride, int64_t padding) {
  if (input.ndim() != 4 || kernel.ndim() != 4)
    throw ShapeError("depthwise_conv2d: expected 4-D input and kernel");
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (kernel.dim(0) != c || kernel.dim(1) != 1)
    throw ShapeError("depthwise_conv2d: kernel " + kernel.shape_str() + " must be [" +
                     std::to_string(c) + ",1,Kh,Kw] for " + std::to_string(c) + " input channels");
  const int64_t kh = kernel.dim(2), kw = kernel.dim(3);
  if (kh > h + 2 * padding || kw > w + 2 * padding)
    throw ShapeError("depthwise_conv2d: kernel larger than padded input");
  const int64_t ho = kern::conv_out_dim(h, kh, stride, padding);
  const int64_t wo = kern::conv_out_dim(w, kw, stride, padding);

  TensorT<T> out = TensorT<T>::zeros({n, c, ho, wo});
  kern::depthwise_forward(out.ptr(), input.cptr(), kernel.cptr(), n, c, h, w, kh, kw, stride,
                          padding, ho, wo, thread_count());

  const bool taped = detail::want_grad(tape, {&input, &kernel});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> in_c = input, k_c = kernel, out_c = out;
    tape->record([=]() mutable {
      kern::depthwise_backward(in_c.requires_grad ? in_c.gptr() : nullptr,
                               k_c.requires_grad ? k_c.gptr() : nullptr, out_c.gcptr(), in_c.cptr(),
                               k_c.cptr(), n, c, h, w, kh, kw, stride, padding, ho, wo,
                               thread_count());
    });
  }
  return out;
}

/// Batch normalization over (N,H,W) per channel. Train mode normalizes by the
/// batch statistics and folds them into the running estimates with the given
/// momentum; infer mode applies the running estimates as a fixed affine map.
template <typename T>
TensorT<T> batchnorm2d(TapeT<T>* tape, const TensorT<T>& input, const TensorT<T>& gamma,
                       const TensorT<T>& beta, std::vector<T>& run_mean, std::vector<T>& run_var,
                       Mode mode, T momentum = T(0.9), T eps = T(1e-5)) {
  if (input.ndim() != 4) throw ShapeError("batchnorm2d: expected 4-D input");
  const int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (gamma.numel() != c || beta.numel() != c)
    throw ShapeError("batchnorm2d: gamma/beta must have " + std::to_string(c) + " elements");
  const int64_t m = n * h * w;  // samples per channel
  if (mode == Mode::kTrain && m < 2)
    throw ShapeError("batchnorm2d: train mode needs at least 2 values per channel, got " +
                     std::to_string(m));
  if (m == 0) throw ShapeError("batchnorm2d: zero spatial-batch extent");

  TensorT<T> out = TensorT<T>::zeros(input.shape);
  const T* ip = input.cptr();
  T* op = out.ptr();
  const int64_t plane = h * w;

  std::vector<T> mean(c), invstd(c);
  if (mode == Mode::kTrain) {
    for (int64_t ch = 0; ch < c; ++ch) {
      T sum = T(0);
      for (int64_t b = 0; b < n; ++b) {
        const T* p = ip + (b * c + ch) * plane;
        for (int64_t i = 0; i < plane; ++i) sum += p[i];
      }
      const T mu = sum / static_cast<T>(m);
      T var = T(0);
      for (int64_t b = 0; b < n; ++b) {
        const T* p = ip + (b * c + ch) * plane;
        for (int64_t i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
      }
      var /= static_cast<T>(m);
      mean[ch] = mu;
      invstd[ch] = T(1) / std::sqrt(var + eps);
      // running variance keeps the unbiased estimate
      const T var_unbiased = var * static_cast<T>(m) / static_cast<T>(m - 1);
      run_mean[ch] = momentum * run_mean[ch] + (T(1) - momentum) * mu;
      run_var[ch] = momentum * run_var[ch] + (T(1) - momentum) * var_unbiased;
    }
  } else {
    for (int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = run_mean[ch];
      invstd[ch] = T(1) / std::sqrt(run_var[ch] + eps);
    }
  }
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* p = ip + (b * c + ch) * plane;
      T* q = op + (b * c + ch) * plane;
      const T g = (*gamma.data)[ch], bt = (*beta.data)[ch], mu = mean[ch], is = invstd[ch];
      for (int64_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * is + bt;
    }

  const bool taped = detail::want_grad(tape, {&input, &gamma, &beta});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> in_c = input, g_c = gamma, b_c = beta, out_c = out;
    const bool train = (mode == Mode::kTrain);
    tape->record([=]() mutable {
      const T* x = in_c.cptr();
      const T* gy = out_c.gcptr();
      for (int64_t ch = 0; ch < c; ++ch) {
        const T mu = mean[ch], is = invstd[ch], g = (*g_c.data)[ch];
        T sum_gy = T(0), sum_gy_xhat = T(0);
        for (int64_t b = 0; b < n; ++b) {
          const int64_t off = (b * c + ch) * plane;
          for (int64_t i = 0; i < plane; ++i) {
            sum_gy += gy[off + i];
            sum_gy_xhat += gy[off + i] * (x[off + i] - mu) * is;
          }
        }
        if (g_c.requires_grad) (*g_c.grad)[ch] += sum_gy_xhat;
        if (b_c.requires_grad) (*b_c.grad)[ch] += sum_gy;
        if (in_c.requires_grad) {
          T* gx = in_c.gptr();
          if (train) {
            const T inv_m = T(1) / static_cast<T>(m);
            for (int64_t b = 0; b < n; ++b) {
              const int64_t off = (b * c + ch) * plane;
              for (int64_t i = 0; i < plane; ++i) {
                const T xhat = (x[off + i] - mu) * is;
                gx[off + i] += g * is * (gy[off + i] - inv_m * sum_gy - inv_m * xhat * sum_gy_xhat);
              }
            }
          } else {
            for (int64_t b = 0; b < n; ++b) {
              const int64_t off = (b * c + ch) * plane;
              for (int64_t i = 0; i < plane; ++i) gx[off + i] += g * is * gy[off + i];
            }
          }
        }
      }
    });
  }
  return out;
}

/// Elementwise max(0,x); the subgradient at 0 is taken as 0.
template <typename T>
TensorT<T> relu(TapeT<T>* tape, const TensorT<T>& input) {
  TensorT<T> out = TensorT<T>::zeros(input.shape);
  const T* ip = input.cptr();
  T* op = out.ptr();
  const int64_t sz = input.numel();
  for (int64_t i = 0; i < sz; ++i) op[i] = ip[i] > T(0) ? ip[i] : T(0);

  const bool taped = detail::want_grad(tape, {&input});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> in_c = input, out_c = out;
    tape->record([=]() mutable {
      if (!in_c.requires_grad) return;
      const T* x = in_c.cptr();
      const T* gy = out_c.gcptr();
      T* gx = in_c.gptr();
      for (int64_t i = 0; i < sz; ++i)
        if (x[i] > T(0)) gx[i] += gy[i];
    });
  }
  return out;
}

/// Concatenate along the channel axis: a fills channels [0,Ca), b the rest.
template <typename T>
TensorT<T> concat_channels(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() != 4 || b.ndim() != 4) throw ShapeError("concat_channels: expected 4-D tensors");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: batch/spatial mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  const int64_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  const int64_t plane = h * w;
  TensorT<T> out = TensorT<T>::zeros({n, ca + cb, h, w});
  T* op = out.ptr();
  for (int64_t bt = 0; bt < n; ++bt) {
    std::copy_n(a.cptr() + bt * ca * plane, ca * plane, op + bt * (ca + cb) * plane);
    std::copy_n(b.cptr() + bt * cb * plane, cb * plane, op + (bt * (ca + cb) + ca) * plane);
  }

  const bool taped = detail::want_grad(tape, {&a, &b});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> a_c = a, b_c = b, out_c = out;
    tape->record([=]() mutable {
      const T* gy = out_c.gcptr();
      for (int64_t bt = 0; bt < n; ++bt) {
        if (a_c.requires_grad) {
          T* ga = a_c.gptr() + bt * ca * plane;
          const T* src = gy + bt * (ca + cb) * plane;
          for (int64_t i = 0; i < ca * plane; ++i) ga[i] += src[i];
        }
        if (b_c.requires_grad) {
          T* gb = b_c.gptr() + bt * cb * plane;
          const T* src = gy + (bt * (ca + cb) + ca) * plane;
          for (int64_t i = 0; i < cb * plane; ++i) gb[i] += src[i];
        }
      }
    });
  }
  return out;
}

/// Mean over the spatial grid: [N,C,H,W] -> [N,C].
template <typename T>
TensorT<T> global_avg_pool(TapeT<T>* tape, const TensorT<T>& input) {
  if (input.ndim() != 4) throw ShapeError("global_avg_pool: expected 4-D input");
  const int64_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (plane < 1) throw ShapeError("global_avg_pool: empty spatial grid");
  TensorT<T> out = TensorT<T>::zeros({n, c});
  const T* ip = input.cptr();
  T* op = out.ptr();
  for (int64_t i = 0; i < n * c; ++i) {
    T sum = T(0);
    for (int64_t j = 0; j < plane; ++j) sum += ip[i * plane + j];
    op[i] = sum / static_cast<T>(plane);
  }

  const bool taped = detail::want_grad(tape, {&input});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> in_c = input, out_c = out;
    tape->record([=]() mutable {
      if (!in_c.requires_grad) return;
      const T* gy = out_c.gcptr();
      T* gx = in_c.gptr();
      const T scale = T(1) / static_cast<T>(plane);
      for (int64_t i = 0; i < n * c; ++i)
        for (int64_t j = 0; j < plane; ++j) gx[i * plane + j] += gy[i] * scale;
    });
  }
  return out;
}

/// Affine map: out = input * weight^T + bias, weight stored [Dout,Din].
template <typename T>
TensorT<T> linear(TapeT<T>* tape, const TensorT<T>& input, const TensorT<T>& weight,
                  const TensorT<T>* bias) {
  if (input.ndim() != 2 || weight.ndim() != 2) throw ShapeError("linear: expected 2-D input and weight");
  const int64_t n = input.dim(0), din = input.dim(1), dout = weight.dim(0);
  if (weight.dim(1) != din)
    throw ShapeError("linear: input features " + std::to_string(din) + " vs weight expecting " +
                     std::to_string(weight.dim(1)));
  if (bias && bias->numel() != dout) throw ShapeError("linear: bias size mismatch");
  TensorT<T> out = TensorT<T>::zeros({n, dout});
  kern::matmul_nt_acc(out.ptr(), input.cptr(), weight.cptr(), 1, n, din, dout, thread_count());
  if (bias) {
    T* op = out.ptr();
    const T* bp = bias->cptr();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < dout; ++j) op[i * dout + j] += bp[j];
  }

  const bool taped = detail::want_grad(tape, {&input, &weight, bias});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> in_c = input, w_c = weight, out_c = out;
    TensorT<T> b_c = bias ? *bias : TensorT<T>();
    tape->record([=]() mutable {
      const int nt = thread_count();
      if (in_c.requires_grad)  // gx = gy * W
        kern::matmul_nn_acc_helper(in_c.gptr(), out_c.gcptr(), w_c.cptr(), n, dout, din, nt);
      if (w_c.requires_grad)  // gW = gy^T * x
        kern::matmul_tn_acc(w_c.gptr(), out_c.gcptr(), in_c.cptr(), 1, n, dout, din, nt);
      if (b_c.defined() && b_c.requires_grad) {
        const T* gy = out_c.gcptr();
        T* gb = b_c.gptr();
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < dout; ++j) gb[j] += gy[i * dout + j];
      }
    });
  }
  return out;
}

template <typename T>
TensorT<T> linear(TapeT<T>* tape, const TensorT<T>& input, const TensorT<T>& weight,
                  std::nullptr_t) {
  return linear(tape, input, weight, static_cast<const TensorT<T>*>(nullptr));
}

/// Numerically stable softmax over the last axis.
template <typename T>
TensorT<T> softmax(TapeT<T>* tape, const TensorT<T>& input) {
  if (input.ndim() < 1) throw ShapeError("softmax: expected at least 1-D input");
  const int64_t k = input.dim(input.ndim() - 1);
  const int64_t rows = input.numel() / std::max<int64_t>(k, 1);
  TensorT<T> out = TensorT<T>::zeros(input.shape);
  const T* ip = input.cptr();
  T* op = out.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = ip + r * k;
    T* y = op + r * k;
    T mx = x[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
    T sum = T(0);
    for (int64_t j = 0; j < k; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (int64_t j = 0; j < k; ++j) y[j] /= sum;
  }

  const bool taped = detail::want_grad(tape, {&input});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> in_c = input, out_c = out;
    tape->record([=]() mutable {
      if (!in_c.requires_grad) return;
      const T* y = out_c.cptr();
      const T* gy = out_c.gcptr();
      T* gx = in_c.gptr();
      for (int64_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (int64_t j = 0; j < k; ++j) dot += gy[r * k + j] * y[r * k + j];
        for (int64_t j = 0; j < k; ++j) gx[r * k + j] += y[r * k + j] * (gy[r * k + j] - dot);
      }
    });
  }
  return out;
}

/// Inverted dropout: train mode zeroes with probability `rate` and scales
/// survivors by 1/(1-rate); infer mode is the identity.
template <typename T>
TensorT<T> dropout(TapeT<T>* tape, const TensorT<T>& input, double rate, Rng& rng, Mode mode) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0,1)");
  if (mode == Mode::kInfer || rate == 0.0) {
    TensorT<T> out = TensorT<T>::from(input.shape, *input.data);
    const bool taped = detail::want_grad(tape, {&input});
    detail::mark_output(out, taped);
    if (taped) {
      TensorT<T> in_c = input, out_c = out;
      tape->record([=]() mutable {
        if (!in_c.requires_grad) return;
        const T* gy = out_c.gcptr();
        T* gx = in_c.gptr();
        for (int64_t i = 0; i < in_c.numel(); ++i) gx[i] += gy[i];
      });
    }
    return out;
  }
  const int64_t sz = input.numel();
  const T scale = T(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(sz));
  TensorT<T> out = TensorT<T>::zeros(input.shape);
  const T* ip = input.cptr();
  T* op = out.ptr();
  for (int64_t i = 0; i < sz; ++i) {
    const bool keep = rng.uniform() >= rate;
    (*mask)[static_cast<size_t>(i)] = keep;
    op[i] = keep ? ip[i] * scale : T(0);
  }

  const bool taped = detail::want_grad(tape, {&input});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> in_c = input, out_c = out;
    tape->record([=]() mutable {
      if (!in_c.requires_grad) return;
      const T* gy = out_c.gcptr();
      T* gx = in_c.gptr();
      for (int64_t i = 0; i < sz; ++i)
        if ((*mask)[static_cast<size_t>(i)]) gx[i] += gy[i] * scale;
    });
  }
  return out;
}

/// Batched matrix product over the last two axes; leading axes must match.
template <typename T>
TensorT<T> matmul_batched(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  if (a.ndim() < 2 || b.ndim() < 2) throw ShapeError("matmul_batched: expected >= 2-D operands");
  if (a.ndim() != b.ndim()) throw ShapeError("matmul_batched: rank mismatch");
  for (int i = 0; i < a.ndim() - 2; ++i)
    if (a.dim(i) != b.dim(i)) throw ShapeError("matmul_batched: batch dims differ");
  const int64_t m = a.dim(a.ndim() - 2), k = a.dim(a.ndim() - 1);
  const int64_t k2 = b.dim(b.ndim() - 2), p = b.dim(b.ndim() - 1);
  if (k != k2)
    throw ShapeError("matmul_batched: inner dims " + std::to_string(k) + " vs " + std::to_string(k2));
  int64_t batch = 1;
  for (int i = 0; i < a.ndim() - 2; ++i) batch *= a.dim(i);
  std::vector<int64_t> oshape(a.shape.begin(), a.shape.end() - 2);
  oshape.push_back(m);
  oshape.push_back(p);
  TensorT<T> out = TensorT<T>::zeros(oshape);
  kern::matmul_nn(out.ptr(), a.cptr(), b.cptr(), batch, m, k, p, thread_count());

  const bool taped = detail::want_grad(tape, {&a, &b});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> a_c = a, b_c = b, out_c = out;
    tape->record([=]() mutable {
      const int nt = thread_count();
      if (a_c.requires_grad) kern::matmul_nt_acc(a_c.gptr(), out_c.gcptr(), b_c.cptr(), batch, m, p, k, nt);
      if (b_c.requires_grad) kern::matmul_tn_acc(b_c.gptr(), a_c.cptr(), out_c.gcptr(), batch, m, k, p, nt);
    });
  }
  return out;
}

/// Elementwise sum of two same-shape tensors.
template <typename T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
  require_same_shape(a, b, "add");
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* ap = a.cptr();
  const T* bp = b.cptr();
  T* op = out.ptr();
  const int64_t sz = a.numel();
  for (int64_t i = 0; i < sz; ++i) op[i] = ap[i] + bp[i];

  const bool taped = detail::want_grad(tape, {&a, &b});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> a_c = a, b_c = b, out_c = out;
    tape->record([=]() mutable {
      const T* gy = out_c.gcptr();
      if (a_c.requires_grad) {
        T* g = a_c.gptr();
        for (int64_t i = 0; i < sz; ++i) g[i] += gy[i];
      }
      if (b_c.requires_grad) {
        T* g = b_c.gptr();
        for (int64_t i = 0; i < sz; ++i) g[i] += gy[i];
      }
    });
  }
  return out;
}

/// Multiply by a compile-time constant (e.g. attention score scaling).
template <typename T>
TensorT<T> scale(TapeT<T>* tape, const TensorT<T>& a, T factor) {
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* ap = a.cptr();
  T* op = out.ptr();
  const int64_t sz = a.numel();
  for (int64_t i = 0; i < sz; ++i) op[i] = ap[i] * factor;

  const bool taped = detail::want_grad(tape, {&a});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> a_c = a, out_c = out;
    tape->record([=]() mutable {
      if (!a_c.requires_grad) return;
      const T* gy = out_c.gcptr();
      T* g = a_c.gptr();
      for (int64_t i = 0; i < sz; ++i) g[i] += gy[i] * factor;
    });
  }
  return out;
}

/// Multiply by a learned scalar parameter of shape [1].
template <typename T>
TensorT<T> mul_scalar_param(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& s) {
  if (s.numel() != 1) throw ShapeError("mul_scalar_param: scalar parameter must have 1 element");
  const T sv = (*s.data)[0];
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* ap = a.cptr();
  T* op = out.ptr();
  const int64_t sz = a.numel();
  for (int64_t i = 0; i < sz; ++i) op[i] = ap[i] * sv;

  const bool taped = detail::want_grad(tape, {&a, &s});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> a_c = a, s_c = s, out_c = out;
    tape->record([=]() mutable {
      const T* gy = out_c.gcptr();
      if (a_c.requires_grad) {
        T* g = a_c.gptr();
        for (int64_t i = 0; i < sz; ++i) g[i] += gy[i] * sv;
      }
      if (s_c.requires_grad) {
        T acc = T(0);
        const T* ap2 = a_c.cptr();
        for (int64_t i = 0; i < sz; ++i) acc += gy[i] * ap2[i];
        (*s_c.grad)[0] += acc;
      }
    });
  }
  return out;
}

/// Swap the last two axes.
template <typename T>
TensorT<T> transpose_last2(TapeT<T>* tape, const TensorT<T>& a) {
  if (a.ndim() < 2) throw ShapeError("transpose_last2: expected >= 2-D input");
  const int64_t m = a.dim(a.ndim() - 2), p = a.dim(a.ndim() - 1);
  int64_t batch = 1;
  for (int i = 0; i < a.ndim() - 2; ++i) batch *= a.dim(i);
  std::vector<int64_t> oshape(a.shape.begin(), a.shape.end() - 2);
  oshape.push_back(p);
  oshape.push_back(m);
  TensorT<T> out = TensorT<T>::zeros(oshape);
  const T* ap = a.cptr();
  T* op = out.ptr();
  for (int64_t bt = 0; bt < batch; ++bt)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < p; ++j) op[(bt * p + j) * m + i] = ap[(bt * m + i) * p + j];

  const bool taped = detail::want_grad(tape, {&a});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> a_c = a, out_c = out;
    tape->record([=]() mutable {
      if (!a_c.requires_grad) return;
      const T* gy = out_c.gcptr();
      T* g = a_c.gptr();
      for (int64_t bt = 0; bt < batch; ++bt)
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < p; ++j) g[(bt * m + i) * p + j] += gy[(bt * p + j) * m + i];
    });
  }
  return out;
}

/// Reinterpret with a new shape of identical element count.
template <typename T>
TensorT<T> reshape(TapeT<T>* tape, const TensorT<T>& a, std::vector<int64_t> new_shape) {
  if (TensorT<T>::numel_of(new_shape) != a.numel())
    throw ShapeError("reshape: element count mismatch");
  TensorT<T> out = TensorT<T>::from(std::move(new_shape), *a.data);

  const bool taped = detail::want_grad(tape, {&a});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> a_c = a, out_c = out;
    tape->record([=]() mutable {
      if (!a_c.requires_grad) return;
      const T* gy = out_c.gcptr();
      T* g = a_c.gptr();
      for (int64_t i = 0; i < a_c.numel(); ++i) g[i] += gy[i];
    });
  }
  return out;
}

/// Sum of all elements, returned as a [1] tensor.
template <typename T>
TensorT<T> sum_all(TapeT<T>* tape, const TensorT<T>& a) {
  T acc = T(0);
  const T* ap = a.cptr();
  for (int64_t i = 0; i < a.numel(); ++i) acc += ap[i];
  TensorT<T> out = TensorT<T>::from({1}, {acc});

  const bool taped = detail::want_grad(tape, {&a});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> a_c = a, out_c = out;
    tape->record([=]() mutable {
      if (!a_c.requires_grad) return;
      const T gy = (*out_c.grad)[0];
      T* g = a_c.gptr();
      for (int64_t i = 0; i < a_c.numel(); ++i) g[i] += gy;
    });
  }
  return out;
}

/// Select one element by flat index as a [1] tensor (class-score picking).
template <typename T>
TensorT<T> pick(TapeT<T>* tape, const TensorT<T>& a, int64_t flat_index) {
  if (flat_index < 0 || flat_index >= a.numel())
    throw ShapeError("pick: index " + std::to_string(flat_index) + " out of range for " +
                     std::to_string(a.numel()) + " elements");
  TensorT<T> out = TensorT<T>::from({1}, {(*a.data)[static_cast<size_t>(flat_index)]});

  const bool taped = detail::want_grad(tape, {&a});
  detail::mark_output(out, taped);
  if (taped) {
    TensorT<T> a_c = a, out_c = out;
    tape->record([=]() mutable {
      if (!a_c.requires_grad) return;
      (*a_c.grad)[static_cast<size_t>(flat_index)] += (*out_c.grad)[0];
    });
  }
  return out;
}

/// Bilinear resize of a 2-D map, align-corners=false, clamped sampling.
/// Utility for upsampling saliency maps; not differentiable.
template <typename T>
std::vector<T> bilinear_resize(const std::vector<T>& map, int64_t h, int64_t w, int64_t out_h,
                               int64_t out_w) {
  if (h < 1 || w < 1 || static_cast<int64_t>(map.size()) != h * w)
    throw ShapeError("bilinear_resize: bad input dimensions");
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: zero output size");
  std::vector<T> out(static_cast<size_t>(out_h * out_w));
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  auto clamp = [](int64_t v, int64_t hi) { return std::max<int64_t>(0, std::min(v, hi)); };
  for (int64_t i = 0; i < out_h; ++i) {
    const double fy = (static_cast<double>(i) + 0.5) * sy - 0.5;
    const int64_t y0 = static_cast<int64_t>(std::floor(fy));
    const double wy = fy - static_cast<double>(y0);
    const int64_t ya = clamp(y0, h - 1), yb = clamp(y0 + 1, h - 1);
    for (int64_t j = 0; j < out_w; ++j) {
      const double fx = (static_cast<double>(j) + 0.5) * sx - 0.5;
      const int64_t x0 = static_cast<int64_t>(std::floor(fx));
      const double wx = fx - static_cast<double>(x0);
      const int64_t xa = clamp(x0, w - 1), xb = clamp(x0 + 1, w - 1);
      const double v = (1.0 - wy) * ((1.0 - wx) * map[ya * w + xa] + wx * map[ya * w + xb]) +
                       wy * ((1.0 - wx) * map[yb * w + xa] + wx * map[yb * w + xb]);
      out[i * out_w + j] = static_cast<T>(v);
    }
  }
  return out;
}

}  // namespace xmac

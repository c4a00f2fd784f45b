#pragma once

#include <cstdint>

#include "xmac/common.hpp"

// Hot inner loops for convolution and batched matmul, shared by the float
// production path and the double gradient-checking path.
//
// Parallelization rule: a thread owns a disjoint slice of the destination
// (an output plane, a batch sample, a filter) and the summation order inside
// each destination element is fixed. Results are therefore identical for any
// thread count, which is what lets XMAC_THREADS be a pure speed knob.
//
// Forward kernels overwrite `out`; backward kernels accumulate (+=) so a
// tensor used by several ops collects all of its gradient contributions.

namespace xmac::kern {

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Valid output range [ow0, ow1) such that ow*stride - pad + kw lands in [0, w).
inline void conv_ow_bounds(int64_t w, int64_t wo, int64_t stride, int64_t pad, int64_t kw,
                           int64_t& ow0, int64_t& ow1) {
  int64_t lo = pad - kw;  // need ow*stride >= lo
  ow0 = lo <= 0 ? 0 : (lo + stride - 1) / stride;
  int64_t hi = w - 1 + pad - kw;  // need ow*stride <= hi
  ow1 = hi < 0 ? 0 : (hi / stride) + 1;
  if (ow1 > wo) ow1 = wo;
  if (ow0 > ow1) ow0 = ow1;
}

template <typename T>
void conv2d_forward(T* out, const T* in, const T* w, const T* bias, int64_t n, int64_t cin,
                    int64_t h, int64_t wd, int64_t cout, int64_t kh, int64_t kw, int64_t stride,
                    int64_t pad, int64_t ho, int64_t wo, int nthreads) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads) if (nthreads > 1)
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t co = 0; co < cout; ++co) {
      T* op = out + (b * cout + co) * ho * wo;
      const T bv = bias ? bias[co] : T(0);
      for (int64_t i = 0; i < ho * wo; ++i) op[i] = bv;
      for (int64_t ci = 0; ci < cin; ++ci) {
        const T* ip = in + (b * cin + ci) * h * wd;
        const T* wp = w + (co * cin + ci) * kh * kw;
        for (int64_t y = 0; y < kh; ++y) {
          for (int64_t x = 0; x < kw; ++x) {
            const T wv = wp[y * kw + x];
            for (int64_t oh = 0; oh < ho; ++oh) {
              const int64_t iy = oh * stride - pad + y;
              if (iy < 0 || iy >= h) continue;
              const T* irow = ip + iy * wd;
              T* orow = op + oh * wo;
              int64_t ow0, ow1;
              conv_ow_bounds(wd, wo, stride, pad, x, ow0, ow1);
              for (int64_t ow = ow0; ow < ow1; ++ow) orow[ow] += wv * irow[ow * stride - pad + x];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(T* gin, const T* gout, const T* w, int64_t n, int64_t cin, int64_t h,
                           int64_t wd, int64_t cout, int64_t kh, int64_t kw, int64_t stride,
                           int64_t pad, int64_t ho, int64_t wo, int nthreads) {
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t co = 0; co < cout; ++co) {
      const T* gp = gout + (b * cout + co) * ho * wo;
      for (int64_t ci = 0; ci < cin; ++ci) {
        T* ip = gin + (b * cin + ci) * h * wd;
        const T* wp = w + (co * cin + ci) * kh * kw;
        for (int64_t y = 0; y < kh; ++y) {
          for (int64_t x = 0; x < kw; ++x) {
            const T wv = wp[y * kw + x];
            for (int64_t oh = 0; oh < ho; ++oh) {
              const int64_t iy = oh * stride - pad + y;
              if (iy < 0 || iy >= h) continue;
              T* irow = ip + iy * wd;
              const T* grow = gp + oh * wo;
              int64_t ow0, ow1;
              conv_ow_bounds(wd, wo, stride, pad, x, ow0, ow1);
              for (int64_t ow = ow0; ow < ow1; ++ow) irow[ow * stride - pad + x] += wv * grow[ow];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weights(T* gw, T* gbias, const T* gout, const T* in, int64_t n, int64_t cin,
                             int64_t h, int64_t wd, int64_t cout, int64_t kh, int64_t kw,
                             int64_t stride, int64_t pad, int64_t ho, int64_t wo, int nthreads) {
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
  for (int64_t co = 0; co < cout; ++co) {
    for (int64_t ci = 0; ci < cin; ++ci) {
      for (int64_t y = 0; y < kh; ++y) {
        for (int64_t x = 0; x < kw; ++x) {
          T acc = T(0);
          for (int64_t b = 0; b < n; ++b) {
            const T* gp = gout + (b * cout + co) * ho * wo;
            const T* ip = in + (b * cin + ci) * h * wd;
            for (int64_t oh = 0; oh < ho; ++oh) {
              const int64_t iy = oh * stride - pad + y;
              if (iy < 0 || iy >= h) continue;
              const T* irow = ip + iy * wd;
              const T* grow = gp + oh * wo;
              int64_t ow0, ow1;
              conv_ow_bounds(wd, wo, stride, pad, x, ow0, ow1);
              for (int64_t ow = ow0; ow < ow1; ++ow) acc += grow[ow] * irow[ow * stride - pad + x];
            }
          }
          gw[((co * cin + ci) * kh + y) * kw + x] += acc;
        }
      }
    }
    if (gbias) {
      T acc = T(0);
      for (int64_t b = 0; b < n; ++b) {
        const T* gp = gout + (b * cout + co) * ho * wo;
        for (int64_t i = 0; i < ho * wo; ++i) acc += gp[i];
      }
      gbias[co] += acc;
    }
  }
}

// Depthwise: one k x k filter per channel, channel c of the output depends
// only on channel c of the input.
template <typename T>
void depthwise_forward(T* out, const T* in, const T* w, int64_t n, int64_t c, int64_t h,
                       int64_t wd, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t ho,
                       int64_t wo, int nthreads) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads) if (nthreads > 1)
  for (int64_t b = 0; b < n; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      T* op = out + (b * c + ch) * ho * wo;
      const T* ip = in + (b * c + ch) * h * wd;
      const T* wp = w + ch * kh * kw;
      for (int64_t i = 0; i < ho * wo; ++i) op[i] = T(0);
      for (int64_t y = 0; y < kh; ++y) {
        for (int64_t x = 0; x < kw; ++x) {
          const T wv = wp[y * kw + x];
          for (int64_t oh = 0; oh < ho; ++oh) {
            const int64_t iy = oh * stride - pad + y;
            if (iy < 0 || iy >= h) continue;
            const T* irow = ip + iy * wd;
            T* orow = op + oh * wo;
            int64_t ow0, ow1;
            conv_ow_bounds(wd, wo, stride, pad, x, ow0, ow1);
            for (int64_t ow = ow0; ow < ow1; ++ow) orow[ow] += wv * irow[ow * stride - pad + x];
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(T* gin, T* gw, const T* gout, const T* in, const T* w, int64_t n,
                        int64_t c, int64_t h, int64_t wd, int64_t kh, int64_t kw, int64_t stride,
                        int64_t pad, int64_t ho, int64_t wo, int nthreads) {
  if (gin) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads) if (nthreads > 1)
    for (int64_t b = 0; b < n; ++b) {
      for (int64_t ch = 0; ch < c; ++ch) {
        T* ip = gin + (b * c + ch) * h * wd;
        const T* gp = gout + (b * c + ch) * ho * wo;
        const T* wp = w + ch * kh * kw;
        for (int64_t y = 0; y < kh; ++y) {
          for (int64_t x = 0; x < kw; ++x) {
            const T wv = wp[y * kw + x];
            for (int64_t oh = 0; oh < ho; ++oh) {
              const int64_t iy = oh * stride - pad + y;
              if (iy < 0 || iy >= h) continue;
              T* irow = ip + iy * wd;
              const T* grow = gp + oh * wo;
              int64_t ow0, ow1;
              conv_ow_bounds(wd, wo, stride, pad, x, ow0, ow1);
              for (int64_t ow = ow0; ow < ow1; ++ow) irow[ow * stride - pad + x] += wv * grow[ow];
            }
          }
        }
      }
    }
  }
  if (gw) {
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
    for (int64_t ch = 0; ch < c; ++ch) {
      for (int64_t y = 0; y < kh; ++y) {
        for (int64_t x = 0; x < kw; ++x) {
          T acc = T(0);
          for (int64_t b = 0; b < n; ++b) {
            const T* gp = gout + (b * c + ch) * ho * wo;
            const T* ip = in + (b * c + ch) * h * wd;
            for (int64_t oh = 0; oh < ho; ++oh) {
              const int64_t iy = oh * stride - pad + y;
              if (iy < 0 || iy >= h) continue;
              const T* irow = ip + iy * wd;
              const T* grow = gp + oh * wo;
              int64_t ow0, ow1;
              conv_ow_bounds(wd, wo, stride, pad, x, ow0, ow1);
              for (int64_t ow = ow0; ow < ow1; ++ow) acc += grow[ow] * irow[ow * stride - pad + x];
            }
          }
          gw[ch * kh * kw + y * kw + x] += acc;
        }
      }
    }
  }
}

// out[b] = A[b] (m x k) * B[b] (k x p); overwrites out.
template <typename T>
void matmul_nn(T* out, const T* a, const T* b, int64_t batch, int64_t m, int64_t k, int64_t p,
               int nthreads) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads) if (nthreads > 1)
  for (int64_t bt = 0; bt < batch; ++bt) {
    for (int64_t i = 0; i < m; ++i) {
      const T* ar = a + (bt * m + i) * k;
      T* orow = out + (bt * m + i) * p;
      for (int64_t j = 0; j < p; ++j) orow[j] = T(0);
      for (int64_t kk = 0; kk < k; ++kk) {
        const T av = ar[kk];
        const T* brow = b + (bt * k + kk) * p;
        for (int64_t j = 0; j < p; ++j) orow[j] += av * brow[j];
      }
    }
  }
}

// out[b] += A[b] (m x k) * B[b]^T with B stored (p x k); accumulates.
template <typename T>
void matmul_nt_acc(T* out, const T* a, const T* b, int64_t batch, int64_t m, int64_t k, int64_t p,
                   int nthreads) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads) if (nthreads > 1)
  for (int64_t bt = 0; bt < batch; ++bt) {
    for (int64_t i = 0; i < m; ++i) {
      const T* ar = a + (bt * m + i) * k;
      T* orow = out + (bt * m + i) * p;
      for (int64_t j = 0; j < p; ++j) {
        const T* brow = b + (bt * p + j) * k;
        T acc = T(0);
        for (int64_t kk = 0; kk < k; ++kk) acc += ar[kk] * brow[kk];
        orow[j] += acc;
      }
    }
  }
}

// out += A (n x dout) * B (dout x din); row-major, accumulates.
template <typename T>
void matmul_nn_acc_helper(T* out, const T* a, const T* b, int64_t n, int64_t dout, int64_t din,
                          int nthreads) {
#pragma omp parallel for schedule(static) num_threads(nthreads) if (nthreads > 1)
  for (int64_t i = 0; i < n; ++i) {
    T* orow = out + i * din;
    const T* ar = a + i * dout;
    for (int64_t o = 0; o < dout; ++o) {
      const T av = ar[o];
      const T* brow = b + o * din;
      for (int64_t j = 0; j < din; ++j) orow[j] += av * brow[j];
    }
  }
}

// out[b] += A[b]^T * B[b] with A stored (m x k), B (m x p); out is (k x p).
template <typename T>
void matmul_tn_acc(T* out, const T* a, const T* b, int64_t batch, int64_t m, int64_t k, int64_t p,
                   int nthreads) {
#pragma omp parallel for collapse(2) schedule(static) num_threads(nthreads) if (nthreads > 1)
  for (int64_t bt = 0; bt < batch; ++bt) {
    for (int64_t kk = 0; kk < k; ++kk) {
      T* orow = out + (bt * k + kk) * p;
      for (int64_t i = 0; i < m; ++i) {
        const T av = a[(bt * m + i) * k + kk];
        const T* brow = b + (bt * m + i) * p;
        for (int64_t j = 0; j < p; ++j) orow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace xmac::kern

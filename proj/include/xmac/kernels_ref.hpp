#pragma once

#include <cstdint>

#include "xmac/kernels.hpp"

// Naive single-threaded reference kernels. Kept deliberately simple (one
// accumulator per output element, no loop reordering) so they can act as the
// ground truth for the parallel kernels in tests and in the benchmark tool.

namespace xmac::kern::ref {

template <typename T>
void conv2d_forward(T* out, const T* in, const T* w, const T* bias, int64_t n, int64_t cin,
                    int64_t h, int64_t wd, int64_t cout, int64_t kh, int64_t kw, int64_t stride,
                    int64_t pad, int64_t ho, int64_t wo) {
  for (int64_t b = 0; b < n; ++b)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          T acc = bias ? bias[co] : T(0);
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t y = 0; y < kh; ++y)
              for (int64_t x = 0; x < kw; ++x) {
                const int64_t iy = oh * stride - pad + y;
                const int64_t ix = ow * stride - pad + x;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += w[((co * cin + ci) * kh + y) * kw + x] * in[((b * cin + ci) * h + iy) * wd + ix];
              }
          out[((b * cout + co) * ho + oh) * wo + ow] = acc;
        }
}

template <typename T>
void depthwise_forward(T* out, const T* in, const T* w, int64_t n, int64_t c, int64_t h,
                       int64_t wd, int64_t kh, int64_t kw, int64_t stride, int64_t pad, int64_t ho,
                       int64_t wo) {
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          T acc = T(0);
          for (int64_t y = 0; y < kh; ++y)
            for (int64_t x = 0; x < kw; ++x) {
              const int64_t iy = oh * stride - pad + y;
              const int64_t ix = ow * stride - pad + x;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += w[(ch * kh + y) * kw + x] * in[((b * c + ch) * h + iy) * wd + ix];
            }
          out[((b * c + ch) * ho + oh) * wo + ow] = acc;
        }
}

template <typename T>
void conv2d_backward_input(T* gin, const T* gout, const T* w, int64_t n, int64_t cin, int64_t h,
                           int64_t wd, int64_t cout, int64_t kh, int64_t kw, int64_t stride,
                           int64_t pad, int64_t ho, int64_t wo) {
  for (int64_t b = 0; b < n; ++b)
    for (int64_t co = 0; co < cout; ++co)
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          const T g = gout[((b * cout + co) * ho + oh) * wo + ow];
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t y = 0; y < kh; ++y)
              for (int64_t x = 0; x < kw; ++x) {
                const int64_t iy = oh * stride - pad + y;
                const int64_t ix = ow * stride - pad + x;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                gin[((b * cin + ci) * h + iy) * wd + ix] += g * w[((co * cin + ci) * kh + y) * kw + x];
              }
        }
}

template <typename T>
void matmul_nn(T* out, const T* a, const T* b, int64_t batch, int64_t m, int64_t k, int64_t p) {
  for (int64_t bt = 0; bt < batch; ++bt)
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < p; ++j) {
        T acc = T(0);
        for (int64_t kk = 0; kk < k; ++kk) acc += a[(bt * m + i) * k + kk] * b[(bt * k + kk) * p + j];
        out[(bt * m + i) * p + j] = acc;
      }
}

}  // namespace xmac::kern::ref

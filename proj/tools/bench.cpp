// xmac-bench: times the OpenMP kernels against the serial reference
// implementations on training-shaped workloads and checks they agree.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "xmac/kernels.hpp"
#include "xmac/kernels_ref.hpp"
#include "xmac/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double median_ms(const std::vector<double>& samples) {
  std::vector<double> s = samples;
  std::sort(s.begin(), s.end());
  return s[s.size() / 2];
}

template <typename F>
double time_ms(F&& fn, int repeats) {
  std::vector<double> times;
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = Clock::now();
    fn();
    const auto t1 = Clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return median_ms(times);
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  double worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(double(a[i]) - b[i]));
  return worst;
}

std::vector<float> randf(size_t n, xmac::Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return v;
}

void row(const char* name, double ref_ms, double par_ms, int threads, double diff) {
  std::printf("%-28s %10.3f %10.3f %8.2fx %4d %12.2e\n", name, ref_ms, par_ms, ref_ms / par_ms,
              threads, diff);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xmac-bench: parallel kernels vs serial reference"};
  int threads = 2;
  int repeats = 5;
  app.add_option("--threads", threads, "thread count for the parallel kernels");
  app.add_option("--repeats", repeats, "timing repeats (median reported)");
  CLI11_PARSE(app, argc, argv);

  xmac::Rng rng(1);
  std::printf("%-28s %10s %10s %9s %4s %12s\n", "kernel", "serial ms", "parallel", "speedup",
              "thr", "max|diff|");

  {
    // conv2d forward: batch 8, 16->32 channels, 64x64, 3x3 stride 1
    const int64_t n = 8, cin = 16, h = 64, w = 64, cout = 32, k = 3, stride = 1, pad = 1;
    const int64_t ho = xmac::kern::conv_out_dim(h, k, stride, pad);
    const int64_t wo = xmac::kern::conv_out_dim(w, k, stride, pad);
    auto in = randf(n * cin * h * w, rng);
    auto wt = randf(cout * cin * k * k, rng);
    auto bias = randf(cout, rng);
    std::vector<float> ref(n * cout * ho * wo), par(ref.size());
    const double t_ref = time_ms(
        [&] {
          xmac::kern::ref::conv2d_forward(ref.data(), in.data(), wt.data(), bias.data(), n, cin, h,
                                          w, cout, k, k, stride, pad, ho, wo);
        },
        repeats);
    const double t_par = time_ms(
        [&] {
          xmac::kern::conv2d_forward(par.data(), in.data(), wt.data(), bias.data(), n, cin, h, w,
                                     cout, k, k, stride, pad, ho, wo, threads);
        },
        repeats);
    row("conv2d fwd 8x16->32 @64^2", t_ref, t_par, threads, max_abs_diff(ref, par));

    auto gout = randf(ref.size(), rng);
    std::vector<float> gin_ref(in.size(), 0.0f), gin_par(in.size(), 0.0f);
    const double b_ref = time_ms(
        [&] {
          std::fill(gin_ref.begin(), gin_ref.end(), 0.0f);
          xmac::kern::ref::conv2d_backward_input(gin_ref.data(), gout.data(), wt.data(), n, cin, h,
                                                 w, cout, k, k, stride, pad, ho, wo);
        },
        repeats);
    const double b_par = time_ms(
        [&] {
          std::fill(gin_par.begin(), gin_par.end(), 0.0f);
          xmac::kern::conv2d_backward_input(gin_par.data(), gout.data(), wt.data(), n, cin, h, w,
                                            cout, k, k, stride, pad, ho, wo, threads);
        },
        repeats);
    row("conv2d bwd-input", b_ref, b_par, threads, max_abs_diff(gin_ref, gin_par));
  }

  {
    // depthwise forward: batch 8, 64 channels, 32x32
    const int64_t n = 8, c = 64, h = 32, w = 32, k = 3;
    auto in = randf(n * c * h * w, rng);
    auto wt = randf(c * k * k, rng);
    std::vector<float> ref(in.size()), par(in.size());
    const double t_ref = time_ms(
        [&] {
          xmac::kern::ref::depthwise_forward(ref.data(), in.data(), wt.data(), n, c, h, w, k, k, 1,
                                             1, h, w);
        },
        repeats);
    const double t_par = time_ms(
        [&] {
          xmac::kern::depthwise_forward(par.data(), in.data(), wt.data(), n, c, h, w, k, k, 1, 1,
                                        h, w, threads);
        },
        repeats);
    row("depthwise fwd 8x64 @32^2", t_ref, t_par, threads, max_abs_diff(ref, par));
  }

  {
    // batched matmul: 16 x (128x128 * 128x128), attention-scores shaped
    const int64_t b = 16, m = 128, k = 128, p = 128;
    auto a = randf(b * m * k, rng);
    auto bm = randf(b * k * p, rng);
    std::vector<float> ref(b * m * p), par(b * m * p);
    const double t_ref =
        time_ms([&] { xmac::kern::ref::matmul_nn(ref.data(), a.data(), bm.data(), b, m, k, p); },
                repeats);
    const double t_par = time_ms(
        [&] { xmac::kern::matmul_nn(par.data(), a.data(), bm.data(), b, m, k, p, threads); },
        repeats);
    row("matmul 16x(128,128,128)", t_ref, t_par, threads, max_abs_diff(ref, par));
  }

  return 0;
}

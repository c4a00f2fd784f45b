#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "xmac/rng.hpp"
#include "xmac/tape.hpp"
#include "xmac/tensor.hpp"

namespace testsup {

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

// Central finite-difference oracle. `forward` must rebuild the whole forward
// pass from the current contents of `params` and return a scalar tensor; it
// is evaluated independently of the recorded tape, so agreement between the
// two is a genuine cross-check of every backward rule on the path.
template <typename F>
double max_grad_error(std::vector<xmac::TensorT<double>*> params, F forward, double h = 1e-4) {
  using xmac::TapeT;
  using xmac::TensorT;

  for (auto* p : params) {
    p->set_requires_grad();
    p->zero_grad();
  }
  TapeT<double> tape;
  TensorT<double> out = forward(&tape);
  tape.backward(out);

  double worst = 0.0;
  for (auto* p : params) {
    for (size_t i = 0; i < p->data->size(); ++i) {
      const double saved = (*p->data)[i];
      (*p->data)[i] = saved + h;
      const double fp = forward(nullptr).item();
      (*p->data)[i] = saved - h;
      const double fm = forward(nullptr).item();
      (*p->data)[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      worst = std::max(worst, rel_err((*p->grad)[i], fd));
    }
  }
  return worst;
}

inline std::vector<double> random_values(size_t n, xmac::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("xmac_test_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

}  // namespace testsup

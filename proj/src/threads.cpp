#include "xmac/common.hpp"

#include <cstdlib>

namespace xmac {

int thread_count() {
  static const int n = [] {
    const char* env = std::getenv("XMAC_THREADS");
    if (!env) return 1;
    int v = std::atoi(env);
    return v >= 1 ? v : 1;
  }();
  return n;
}

}  // namespace xmac

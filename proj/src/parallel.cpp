#include "acrn/parallel.hpp"

#include <omp.h>

#include "acrn/errors.hpp"

namespace acrn {

namespace {
int g_threads = 1;
}

int num_threads() { return g_threads; }

void set_num_threads(int threads) {
  if (threads < 1) throw ConfigError("thread count must be >= 1");
  g_threads = threads;
  omp_set_num_threads(threads);
}

}  // namespace acrn

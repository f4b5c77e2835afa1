#pragma once

namespace acrn {

// Number of worker threads used inside kernels. Defaults to 1, which is the
// only mode with bit-exact reproducibility.
int num_threads();
void set_num_threads(int threads);

}  // namespace acrn

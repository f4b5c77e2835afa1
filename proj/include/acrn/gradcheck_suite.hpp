#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "acrn/grad_check.hpp"

namespace acrn {

// Names of the built-in 64-bit gradient checks, in run order.
std::vector<std::string> gradcheck_names();

// Runs one built-in check on seeded random inputs. The scalar objective is a
// random weighting of the checked op's output, so no gradient is trivially
// zero. Throws ConfigError for an unknown name.
GradCheckReport run_gradcheck(std::string_view name, std::uint64_t seed = 1, double h = 1e-3, double tol = 1e-4);

}  // namespace acrn

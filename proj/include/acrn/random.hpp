#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace acrn {

// Engine seeded from a seed plus a structural path (block index, layer index,
// epoch, ...), so each stream is independent of how many draws others made.
std::mt19937_64 make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

}  // namespace acrn

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "uniprompt/tensor.h"

namespace uniprompt {

using Rng = std::mt19937_64;

// Independent stream seed for a named consumer of a base seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace uniprompt

#pragma once

#include <random>

#include "cvpe/tensor.hpp"

namespace cvpe::init {

Tensor normal(Shape shape, double std, std::mt19937_64& rng);
/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace cvpe::init

#include "cvpe/init.hpp"

#include <cmath>

namespace cvpe::init {

Tensor normal(Shape shape, double std, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, std);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

}  // namespace cvpe::init

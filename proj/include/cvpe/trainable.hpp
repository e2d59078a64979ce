#pragma once

#include <span>
#include <vector>

#include "cvpe/autodiff.hpp"

namespace cvpe {

/// Anything the training loop and gradient checker can drive: a flat
/// parameter list and a batched forward pass whose output is stacked along a
/// leading batch axis.
class Trainable {
public:
    virtual ~Trainable() = default;
    virtual std::vector<ad::Parameter*> parameters() = 0;
    virtual ad::Var forward(ad::Graph& graph, std::span<const Tensor* const> inputs, bool trainable) = 0;
};

}  // namespace cvpe

#pragma once

// Tape-based reverse-mode differentiation over dense double tensors.
//
// A Graph records every op applied during a forward pass. Calling
// backward() on a scalar node walks the tape in reverse and accumulates
// gradients into the Parameter objects bound with Graph::parameter().

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cvpe/tensor.hpp"

namespace cvpe::ad {

/// A named learnable tensor and its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

class Graph;

/// Handle to a node on a Graph.
class Var {
public:
    Var() = default;
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Graph* graph() const { return graph_; }
    std::size_t id() const { return id_; }

private:
    friend class Graph;
    Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

/// Counts attention-score entries (one per query/key/head triple).
struct ScoreCounter {
    std::uint64_t entries = 0;
};

class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t)>;

    Var constant(Tensor value);
    /// Leaf bound to `p`; backward() adds into p.grad. `p` must outlive the graph.
    Var parameter(Parameter& p);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    /// Gradient buffer of a node, allocated on first use.
    Tensor& grad(std::size_t id);
    bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

    Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

    /// Seeds d(loss)/d(loss) = 1 and propagates. Throws NumericError naming
    /// the first parameter whose gradient is non-finite.
    void backward(const Var& loss);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
};

// Linear algebra. matmul treats every leading axis of x as a row index:
// x [..., k] times w [k, n] gives [..., n].
Var matmul(const Var& x, const Var& w);
Var add(const Var& a, const Var& b);
Var add_bias(const Var& x, const Var& bias);
/// Row r of x (viewed as [rows, d]) receives table row (r mod table.rows).
Var add_periodic_rows(const Var& x, const Var& table);
Var scale(const Var& x, double factor);
Var reshape(const Var& x, Shape shape);
/// Axis permutation: out.shape[i] = x.shape[perm[i]].
Var permute(const Var& x, const std::vector<std::size_t>& perm);

// Nonlinearities and normalisation.
Var gelu(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps);

/// Grouped multi-head scaled dot-product attention without input
/// projections. q is [Gq, Lq, d], k and v are [Gk, Lk, d]. The output has
/// G = max(Gq, Gk) groups; group g reads q[g mod Gq] and k/v[g mod Gk].
/// Heads split the feature axis into contiguous slices of d / heads.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t heads, ScoreCounter* counter = nullptr);

/// out[r, :] = x[r, :] * row_scale[r] + row_shift[r] for x viewed as [rows, cols].
Var affine_rows(const Var& x, const std::vector<double>& row_scale, const std::vector<double>& row_shift);

// Scalar reductions.
Var mse(const Var& pred, const Tensor& target);
Var sum_squares(const Var& x);

// Plain forward kernels shared with non-differentiable callers.
double gelu_value(double x);
double gelu_derivative(double x);

}  // namespace cvpe::ad

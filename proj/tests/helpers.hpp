#pragma once

#include <random>
#include <vector>

#include "cvpe/autodiff.hpp"
#include "cvpe/tensor.hpp"
#include "cvpe/trainable.hpp"
#include "cvpe/train.hpp"
#include "oracles.hpp"

namespace testing {

inline cvpe::Tensor random_tensor(cvpe::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    cvpe::Tensor t(std::move(shape));
    for (double& v : t.data()) v = n(rng);
    return t;
}

inline cvpe::Tensor from_mat(const oracle::Mat& m) {
    cvpe::Tensor t({m.size(), m[0].size()});
    for (std::size_t i = 0; i < m.size(); ++i) {
        for (std::size_t j = 0; j < m[0].size(); ++j) t.at(i, j) = m[i][j];
    }
    return t;
}

inline cvpe::Tensor from_vec(const oracle::Vec& v) { return cvpe::Tensor({v.size()}, v); }

inline oracle::Mat to_mat(const cvpe::Tensor& t) {
    oracle::Mat m(t.dim(0), oracle::Vec(t.dim(1)));
    for (std::size_t i = 0; i < t.dim(0); ++i) {
        for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
    }
    return m;
}

inline oracle::Vec to_vec(const cvpe::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(const cvpe::Tensor& a, const cvpe::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// y = x w + b applied to the last axis of stacked [N, T] inputs.
class LinearModel : public cvpe::Trainable {
public:
    LinearModel(std::size_t in, std::size_t out, std::uint64_t seed = 0)
        : w("linear.w", cvpe::Tensor({in, out})), b("linear.b", cvpe::Tensor({out})) {
        std::mt19937_64 rng(seed);
        w.value = random_tensor({in, out}, rng, 0.1);
        w.zero_grad();
    }

    std::vector<cvpe::ad::Parameter*> parameters() override { return {&w, &b}; }

    cvpe::ad::Var forward(cvpe::ad::Graph& g, std::span<const cvpe::Tensor* const> inputs, bool trainable) override {
        auto x = g.constant(cvpe::train::stack(inputs));
        auto wv = trainable ? g.parameter(w) : g.constant(w.value);
        auto bv = trainable ? g.parameter(b) : g.constant(b.value);
        return cvpe::ad::add_bias(cvpe::ad::matmul(x, wv), bv);
    }

    cvpe::ad::Parameter w, b;
};

}  // namespace testing

#pragma once

// Cross-variate patch embedding block.
//
// For every patch position j the c router vectors R(j) attend over the N
// variate embeddings at that position (stage 1), and the variates then
// attend back over the router summaries (stage 2):
//
//   A(j)  = MHA1(R(j), X(j), X(j))
//   Zb(j) = MHA2(X(j), A(j), A(j))
//   Zh    = LayerNorm1(X + Zb)
//   Z     = LayerNorm2(Zh + MLP(Zh))
//
// where X = embeddings + positional table. Queries, keys and values enter
// the attention unprojected; each stage keeps an output projection.

#include <random>
#include <vector>

#include "cvpe/autodiff.hpp"
#include "cvpe/tensor.hpp"

namespace cvpe::block {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr std::size_t kDefaultRouters = 4;

struct AttentionConfig {
    std::size_t heads = 8;

    std::size_t head_dim(std::size_t width) const { return width / heads; }
    /// Throws ConfigError unless heads >= 1 and heads divides width.
    void validate(std::size_t width) const;
};

struct CvpeShape {
    std::size_t patches = 1;      // P
    std::size_t embed_dim = 32;   // d_m
    std::size_t routers = kDefaultRouters;  // c
    std::size_t ff_dim = 128;     // MLP hidden width
};

struct CvpeParams {
    ad::Parameter positional;  // [P, d_m]
    ad::Parameter routers;     // [P, c, d_m], shared across variates
    ad::Parameter mha1_out_w, mha1_out_b;
    ad::Parameter mha2_out_w, mha2_out_b;
    ad::Parameter mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    ad::Parameter ln1_gain, ln1_bias, ln2_gain, ln2_bias;

    /// Positional table and routers ~ N(0, 0.02); affine layers uniform in
    /// +-1/sqrt(fan_in); LayerNorm gain 1, bias 0.
    static CvpeParams init(const CvpeShape& shape, std::mt19937_64& rng);

    CvpeShape shape() const;
    /// Stable enumeration order used by the optimizer and checkpoints.
    std::vector<ad::Parameter*> list();
    std::vector<const ad::Parameter*> list() const;
};

/// Graph handles for every CvpeParams tensor.
struct CvpeVars {
    ad::Var positional, routers;
    ad::Var mha1_out_w, mha1_out_b, mha2_out_w, mha2_out_b;
    ad::Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    ad::Var ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

/// Binds as trainable leaves (gradients flow into `params`).
CvpeVars bind(ad::Graph& graph, CvpeParams& params);
/// Binds as constants.
CvpeVars bind_constant(ad::Graph& graph, const CvpeParams& params);

// Graph-level ops. Embeddings are [B, N, P, d_m].
ad::Var add_positional(const ad::Var& x, const ad::Var& table);
/// Grouped MHA (see ad::attention) followed by the output projection.
ad::Var multi_head_attention(const ad::Var& query, const ad::Var& key, const ad::Var& value,
                             const AttentionConfig& cfg, const ad::Var& out_w, const ad::Var& out_b,
                             ad::ScoreCounter* counter = nullptr);
ad::Var router_attention(const ad::Var& x, const CvpeVars& params, const AttentionConfig& cfg,
                         ad::ScoreCounter* counter = nullptr);
ad::Var cvpe_forward(const ad::Var& x, const CvpeVars& params, const AttentionConfig& cfg,
                     ad::ScoreCounter* counter = nullptr);

// Tensor conveniences for a single sample. Embeddings are [N, P, d_m].
Tensor add_positional(const Tensor& x, const Tensor& table);
/// query [q, d], key/value [k, d] -> [q, d].
Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value, const AttentionConfig& cfg,
                            const Tensor& out_w, const Tensor& out_b);
Tensor router_attention(const Tensor& x, const CvpeParams& params, const AttentionConfig& cfg,
                        ad::ScoreCounter* counter = nullptr);
Tensor cvpe_forward(const Tensor& x, const CvpeParams& params, const AttentionConfig& cfg,
                    ad::ScoreCounter* counter = nullptr);

/// Score entries one sample costs: P * K * (c * N) + P * K * (N * c).
std::uint64_t expected_score_entries(std::size_t variates, std::size_t patches, std::size_t routers,
                                     std::size_t heads);

}  // namespace cvpe::block

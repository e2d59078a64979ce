#include "cvpe/cvpe_block.hpp"

#include <cmath>

#include "cvpe/errors.hpp"
#include "cvpe/init.hpp"

namespace cvpe::block {

void AttentionConfig::validate(std::size_t width) const {
    if (heads == 0) throw ConfigError("attention heads must be positive");
    if (width % heads != 0) {
        throw ConfigError("attention heads (" + std::to_string(heads) + ") must divide the embedding width (" +
                          std::to_string(width) + ")");
    }
}

CvpeParams CvpeParams::init(const CvpeShape& s, std::mt19937_64& rng) {
    CvpeParams p;
    p.positional = ad::Parameter("cvpe.positional", init::normal({s.patches, s.embed_dim}, 0.02, rng));
    p.routers = ad::Parameter("cvpe.routers", init::normal({s.patches, s.routers, s.embed_dim}, 0.02, rng));
    p.mha1_out_w = ad::Parameter("cvpe.mha1.out_w", init::fan_in_uniform({s.embed_dim, s.embed_dim}, s.embed_dim, rng));
    p.mha1_out_b = ad::Parameter("cvpe.mha1.out_b", init::fan_in_uniform({s.embed_dim}, s.embed_dim, rng));
    p.mha2_out_w = ad::Parameter("cvpe.mha2.out_w", init::fan_in_uniform({s.embed_dim, s.embed_dim}, s.embed_dim, rng));
    p.mha2_out_b = ad::Parameter("cvpe.mha2.out_b", init::fan_in_uniform({s.embed_dim}, s.embed_dim, rng));
    p.mlp_w1 = ad::Parameter("cvpe.mlp.w1", init::fan_in_uniform({s.embed_dim, s.ff_dim}, s.embed_dim, rng));
    p.mlp_b1 = ad::Parameter("cvpe.mlp.b1", init::fan_in_uniform({s.ff_dim}, s.embed_dim, rng));
    p.mlp_w2 = ad::Parameter("cvpe.mlp.w2", init::fan_in_uniform({s.ff_dim, s.embed_dim}, s.ff_dim, rng));
    p.mlp_b2 = ad::Parameter("cvpe.mlp.b2", init::fan_in_uniform({s.embed_dim}, s.ff_dim, rng));
    p.ln1_gain = ad::Parameter("cvpe.ln1.gain", Tensor({s.embed_dim}, 1.0));
    p.ln1_bias = ad::Parameter("cvpe.ln1.bias", Tensor({s.embed_dim}, 0.0));
    p.ln2_gain = ad::Parameter("cvpe.ln2.gain", Tensor({s.embed_dim}, 1.0));
    p.ln2_bias = ad::Parameter("cvpe.ln2.bias", Tensor({s.embed_dim}, 0.0));
    return p;
}

CvpeShape CvpeParams::shape() const {
    return CvpeShape{routers.value.dim(0), routers.value.dim(2), routers.value.dim(1), mlp_w1.value.dim(1)};
}

std::vector<ad::Parameter*> CvpeParams::list() {
    return {&positional, &routers,  &mha1_out_w, &mha1_out_b, &mha2_out_w, &mha2_out_b, &mlp_w1,
            &mlp_b1,     &mlp_w2,   &mlp_b2,     &ln1_gain,   &ln1_bias,   &ln2_gain,   &ln2_bias};
}

std::vector<const ad::Parameter*> CvpeParams::list() const {
    auto mutable_list = const_cast<CvpeParams*>(this)->list();
    return {mutable_list.begin(), mutable_list.end()};
}

namespace {

template <typename Bind>
CvpeVars bind_with(CvpeParams& p, Bind&& b) {
    return CvpeVars{b(p.positional), b(p.routers),  b(p.mha1_out_w), b(p.mha1_out_b), b(p.mha2_out_w),
                    b(p.mha2_out_b), b(p.mlp_w1),   b(p.mlp_b1),     b(p.mlp_w2),     b(p.mlp_b2),
                    b(p.ln1_gain),   b(p.ln1_bias), b(p.ln2_gain),   b(p.ln2_bias)};
}

ad::Var checked(ad::Var v, const char* stage) {
    if (!v.value().all_finite()) throw NumericError(stage, "non-finite intermediate");
    return v;
}

}  // namespace

CvpeVars bind(ad::Graph& graph, CvpeParams& params) {
    return bind_with(params, [&](ad::Parameter& p) { return graph.parameter(p); });
}

CvpeVars bind_constant(ad::Graph& graph, const CvpeParams& params) {
    return bind_with(const_cast<CvpeParams&>(params), [&](ad::Parameter& p) { return graph.constant(p.value); });
}

ad::Var add_positional(const ad::Var& x, const ad::Var& table) {
    const Shape& s = x.shape();
    if (s.size() != 4 || table.shape() != Shape{s[2], s[3]}) {
        throw ShapeError("add_positional: embeddings " + to_string(s) + ", table " + to_string(table.shape()));
    }
    return ad::add_periodic_rows(x, table);
}

ad::Var multi_head_attention(const ad::Var& query, const ad::Var& key, const ad::Var& value,
                             const AttentionConfig& cfg, const ad::Var& out_w, const ad::Var& out_b,
                             ad::ScoreCounter* counter) {
    cfg.validate(query.shape().back());
    if (!query.value().all_finite() || !key.value().all_finite() || !value.value().all_finite()) {
        throw NumericError("multi_head_attention", "non-finite input");
    }
    auto mixed = ad::attention(query, key, value, cfg.heads, counter);
    return ad::add_bias(ad::matmul(mixed, out_w), out_b);
}

ad::Var router_attention(const ad::Var& x, const CvpeVars& p, const AttentionConfig& cfg, ad::ScoreCounter* counter) {
    const Shape s = x.shape();
    if (s.size() != 4) throw ShapeError("router_attention expects [B, N, P, d], got " + to_string(s));
    const std::size_t b = s[0], n = s[1], np = s[2], d = s[3];
    const Shape& rs = p.routers.shape();
    if (rs.size() != 3 || rs[0] != np || rs[2] != d) {
        throw ShapeError("router_attention: routers " + to_string(rs) + " do not match embeddings " + to_string(s));
    }
    if (!x.value().all_finite()) throw NumericError("cvpe.input", "non-finite embeddings");
    // [B, N, P, d] -> [B * P, N, d]: one group per (sample, patch position).
    auto by_position = ad::reshape(ad::permute(x, {0, 2, 1, 3}), {b * np, n, d});
    auto summary = checked(
        multi_head_attention(p.routers, by_position, by_position, cfg, p.mha1_out_w, p.mha1_out_b, counter),
        "cvpe.mha1");
    auto spread =
        checked(multi_head_attention(by_position, summary, summary, cfg, p.mha2_out_w, p.mha2_out_b, counter),
                "cvpe.mha2");
    auto back = ad::permute(ad::reshape(spread, {b, np, n, d}), {0, 2, 1, 3});
    auto hidden = checked(ad::layer_norm(ad::add(x, back), p.ln1_gain, p.ln1_bias, kLayerNormEps), "cvpe.layernorm1");
    auto mlp = ad::add_bias(ad::matmul(ad::gelu(ad::add_bias(ad::matmul(hidden, p.mlp_w1), p.mlp_b1)), p.mlp_w2),
                            p.mlp_b2);
    return checked(ad::layer_norm(ad::add(hidden, mlp), p.ln2_gain, p.ln2_bias, kLayerNormEps), "cvpe.layernorm2");
}

ad::Var cvpe_forward(const ad::Var& x, const CvpeVars& p, const AttentionConfig& cfg, ad::ScoreCounter* counter) {
    return router_attention(add_positional(x, p.positional), p, cfg, counter);
}

Tensor add_positional(const Tensor& x, const Tensor& table) {
    if (x.rank() != 3) throw ShapeError("add_positional expects [N, P, d]");
    ad::Graph g;
    auto xv = g.constant(x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}));
    return add_positional(xv, g.constant(table)).value().reshaped(x.shape());
}

Tensor multi_head_attention(const Tensor& query, const Tensor& key, const Tensor& value, const AttentionConfig& cfg,
                            const Tensor& out_w, const Tensor& out_b) {
    if (query.rank() != 2 || key.rank() != 2 || value.rank() != 2) {
        throw ShapeError("multi_head_attention expects rank-2 query, key and value");
    }
    ad::Graph g;
    auto q = g.constant(query.reshaped({1, query.dim(0), query.dim(1)}));
    auto k = g.constant(key.reshaped({1, key.dim(0), key.dim(1)}));
    auto v = g.constant(value.reshaped({1, value.dim(0), value.dim(1)}));
    auto out = multi_head_attention(q, k, v, cfg, g.constant(out_w), g.constant(out_b));
    return out.value().reshaped({query.dim(0), out_w.dim(1)});
}

Tensor router_attention(const Tensor& x, const CvpeParams& params, const AttentionConfig& cfg,
                        ad::ScoreCounter* counter) {
    if (x.rank() != 3) throw ShapeError("router_attention expects [N, P, d]");
    ad::Graph g;
    auto vars = bind_constant(g, params);
    auto xv = g.constant(x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}));
    return router_attention(xv, vars, cfg, counter).value().reshaped(x.shape());
}

Tensor cvpe_forward(const Tensor& x, const CvpeParams& params, const AttentionConfig& cfg, ad::ScoreCounter* counter) {
    if (x.rank() != 3) throw ShapeError("cvpe_forward expects [N, P, d]");
    ad::Graph g;
    auto vars = bind_constant(g, params);
    auto xv = g.constant(x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}));
    return cvpe_forward(xv, vars, cfg, counter).value().reshaped(x.shape());
}

std::uint64_t expected_score_entries(std::size_t variates, std::size_t patches, std::size_t routers,
                                     std::size_t heads) {
    const std::uint64_t per_stage = static_cast<std::uint64_t>(patches) * heads * routers * variates;
    return 2 * per_stage;
}

}  // namespace cvpe::block

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cvpe/errors.hpp"
#include "cvpe/model.hpp"
#include "cvpe/train.hpp"
#include "helpers.hpp"

using namespace cvpe;
using testing::random_tensor;

namespace {

model::ModelConfig small_config(model::EmbeddingVariant variant) {
    model::ModelConfig c;
    c.patch = {4, 2, 20, 8};
    c.attention.heads = 2;
    c.routers = 2;
    c.prototypes = 6;
    c.backbone = {1, 8, 2, 16};
    c.horizon = 5;
    c.variant = variant;
    return c;
}

// Rows with mean 0 and population variance 1 - eps are fixed points of an
// un-scaled LayerNorm.
Tensor layer_norm_fixed_rows(std::size_t rows, std::size_t d, std::mt19937_64& rng) {
    Tensor t = random_tensor({rows, d}, rng);
    for (std::size_t r = 0; r < rows; ++r) {
        auto row = t.row(r);
        double m = 0.0, v = 0.0;
        for (double x : row) m += x / static_cast<double>(d);
        for (double x : row) v += (x - m) * (x - m) / static_cast<double>(d);
        const double s = std::sqrt((1.0 - block::kLayerNormEps) / v);
        for (double& x : row) x = (x - m) * s;
    }
    return t;
}

void make_block_identity(block::CvpeParams& p) {
    p.positional.value.fill(0.0);
    p.mha2_out_w.value.fill(0.0);
    p.mha2_out_b.value.fill(0.0);
    p.mlp_w2.value.fill(0.0);
    p.mlp_b2.value.fill(0.0);
    p.ln1_gain.value.fill(1.0);
    p.ln1_bias.value.fill(0.0);
    p.ln2_gain.value.fill(1.0);
    p.ln2_bias.value.fill(0.0);
}

}  // namespace

TEST_CASE("config problems name the fields involved") {
    auto c = small_config(model::EmbeddingVariant::cvpe);
    CHECK(c.problems().empty());
    c.attention.heads = 3;
    c.backbone.heads = 3;
    c.patch.context = 4;
    auto issues = c.problems();
    REQUIRE(issues.size() == 3);
    CHECK(issues[1].find("attention.heads") != std::string::npos);
    CHECK(issues[1].find("patch.embed_dim") != std::string::npos);
    CHECK(issues[2].find("backbone.d_llm") != std::string::npos);
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("forward shape and forecast agree") {
    std::mt19937_64 rng(31);
    auto m = model::Model::create(small_config(model::EmbeddingVariant::cvpe), 0);
    std::vector<Tensor> windows{random_tensor({3, 20}, rng), random_tensor({3, 20}, rng)};
    std::vector<const Tensor*> ptrs{&windows[0], &windows[1]};
    ad::Graph g;
    auto out = m.forward(g, ptrs, false);
    CHECK(out.shape() == Shape{2, 3, 5});
    CHECK(m.forecast(windows[1]) == m.forecast_batch(ptrs)[1]);
    CHECK_THROWS_AS(m.forecast(random_tensor({3, 19}, rng)), ShapeError);
}

TEST_CASE("paired initialisation shares every non-cvpe tensor") {
    for (std::uint64_t seed : {0u, 7u}) {
        auto v = model::Model::create(small_config(model::EmbeddingVariant::vanilla), seed);
        auto c = model::Model::create(small_config(model::EmbeddingVariant::cvpe), seed);
        auto vp = v.params().list();
        std::vector<ad::Parameter*> shared;
        for (auto* p : c.params().list()) {
            if (p->name.rfind("cvpe.", 0) != 0) shared.push_back(p);
        }
        REQUIRE(vp.size() == shared.size());
        for (std::size_t i = 0; i < vp.size(); ++i) {
            CHECK(vp[i]->name == shared[i]->name);
            CHECK(vp[i]->value == shared[i]->value);
        }
        CHECK(c.params().list().size() == vp.size() + 14);
    }
}

TEST_CASE("vanilla variant is exactly channel-independent") {
    std::mt19937_64 rng(32);
    auto m = model::Model::create(small_config(model::EmbeddingVariant::vanilla), 3);
    auto cv = model::Model::create(small_config(model::EmbeddingVariant::cvpe), 3);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor w = random_tensor({4, 20}, rng);
        Tensor base = m.forecast(w), base_cv = cv.forecast(w);
        const std::size_t ch = static_cast<std::size_t>(trial % 4);
        for (std::size_t t = 0; t < 20; ++t) w.at(ch, t) += std::normal_distribution<double>(0.0, 2.0)(rng);
        Tensor moved = m.forecast(w), moved_cv = cv.forecast(w);
        double leak_cv = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            if (c == ch) continue;
            for (std::size_t h = 0; h < 5; ++h) {
                CHECK(moved.at(c, h) == base.at(c, h));
                leak_cv += std::abs(moved_cv.at(c, h) - base_cv.at(c, h));
            }
        }
        CHECK(leak_cv > 0.0);
    }
}

TEST_CASE("identity-configured block is the identity on LayerNorm fixed points") {
    std::mt19937_64 rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + trial % 4, np = 1 + trial % 5, d = 8;
        auto p = block::CvpeParams::init({np, d, 3, 32}, rng);
        make_block_identity(p);
        for (double& v : p.routers.value.data()) v = std::normal_distribution<double>(0.0, 1.0)(rng);
        Tensor x = layer_norm_fixed_rows(n * np, d, rng).reshaped({n, np, d});
        CHECK(testing::max_abs_diff(block::cvpe_forward(x, p, {2}), x) <= 1e-9);
    }
}

TEST_CASE("cvpe model with an identity block matches vanilla") {
    std::mt19937_64 rng(34);
    auto cfg_v = small_config(model::EmbeddingVariant::vanilla);
    auto cfg_c = small_config(model::EmbeddingVariant::cvpe);
    auto v = model::Model::create(cfg_v, 5);
    auto c = model::Model::create(cfg_c, 5);
    // Constant embeddings on the LayerNorm fixed-point sphere: every patch maps
    // to the same vector, which both LayerNorms then leave unchanged.
    const Tensor e = layer_norm_fixed_rows(1, 8, rng).reshaped({8});
    for (auto* m : {&v, &c}) {
        m->params().patch_proj.w.value.fill(0.0);
        m->params().patch_proj.b.value = e;
    }
    make_block_identity(*c.params().cvpe);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor w = random_tensor({3, 20}, rng, 3.0);
        CHECK(testing::max_abs_diff(v.forecast(w), c.forecast(w)) <= 1e-9);
    }
}

TEST_CASE("full cvpe model gradient check, tiny config") {
    model::ModelConfig cfg;
    cfg.patch = {4, 4, 24, 8};
    cfg.attention.heads = 2;
    cfg.routers = 2;
    cfg.prototypes = 10;
    cfg.backbone = {1, 8, 2, 16};
    cfg.horizon = 4;
    REQUIRE(cfg.patches() == 5);
    auto m = model::Model::create(cfg, 1);
    std::mt19937_64 rng(35);
    std::vector<Tensor> in{random_tensor({3, 24}, rng), random_tensor({3, 24}, rng)};
    std::vector<Tensor> out{random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)};
    auto report = train::grad_check(m, in, out, {});
    auto params = m.parameters();
    REQUIRE(report.entries.size() == params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        INFO(report.entries[i].name);
        CHECK(report.entries[i].coordinates == std::min<std::size_t>(16, params[i]->value.size()));
        CHECK(report.entries[i].max_rel_error <= 1e-4);
    }
}

TEST_CASE("checkpoint round trip") {
    auto path = std::filesystem::temp_directory_path() / "cvpe_test_model.ckpt";
    std::mt19937_64 rng(36);
    for (auto variant : {model::EmbeddingVariant::vanilla, model::EmbeddingVariant::cvpe}) {
        auto m = model::Model::create(small_config(variant), 9);
        m.save(path);
        auto loaded = model::Model::load(path);
        CHECK(loaded.config().variant == variant);
        Tensor w = random_tensor({3, 20}, rng);
        CHECK(loaded.forecast(w) == m.forecast(w));
    }
    {
        std::ofstream bad(path, std::ios::binary);
        bad << "not a checkpoint";
    }
    CHECK_THROWS_AS(model::Model::load(path), ParseError);
}

TEST_CASE("config json round trip") {
    auto c = small_config(model::EmbeddingVariant::cvpe);
    c.cvpe_ff_dim = 24;
    auto back = model::model_config_from_json(model::model_config_to_json(c));
    CHECK(model::model_config_to_json(back) == model::model_config_to_json(c));
    CHECK(back.cvpe_hidden() == 24);
    CHECK_THROWS_AS(model::parse_variant("patchtst"), ConfigError);
}

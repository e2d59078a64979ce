#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvpe/autodiff.hpp"
#include "cvpe/cvpe_block.hpp"
#include "cvpe/preprocess.hpp"
#include "cvpe/trainable.hpp"

namespace cvpe::model {

enum class EmbeddingVariant { vanilla, cvpe };

std::string to_string(EmbeddingVariant v);
EmbeddingVariant parse_variant(const std::string& name);

/// Small channel-independent transformer encoder standing in for the LLM.
struct BackboneConfig {
    std::size_t layers = 2;
    std::size_t d_llm = 32;
    std::size_t heads = 4;
    std::size_t d_ff = 128;
};

struct ModelConfig {
    preprocess::PatchConfig patch{16, 8, 256, 32};
    block::AttentionConfig attention{8};  // CVPE and reprogramming heads
    std::size_t routers = block::kDefaultRouters;
    std::size_t cvpe_ff_dim = 0;  // 0 selects 4 * embed_dim
    std::size_t prototypes = 100;
    BackboneConfig backbone;
    std::size_t horizon = 96;
    EmbeddingVariant variant = EmbeddingVariant::cvpe;

    std::size_t patches() const { return patch.patch_count(); }
    std::size_t cvpe_hidden() const { return cvpe_ff_dim ? cvpe_ff_dim : 4 * patch.embed_dim; }
    /// Every violated constraint, each naming the fields involved.
    std::vector<std::string> problems() const;
    /// Throws ConfigError listing problems() when non-empty.
    void validate() const;
};

struct Linear {
    ad::Parameter w;  // [in, out]
    ad::Parameter b;  // [out]
};

struct PrototypeBank {
    ad::Parameter prototypes;  // [V', d_llm]
};

struct ReprogramParams {
    PrototypeBank bank;
    Linear query;  // d_m -> d_m
    ad::Parameter key;  // [d_llm, d_m], no bias
    Linear value;  // d_llm -> d_m
    Linear out;    // d_m -> d_llm
};

struct BackboneLayer {
    ad::Parameter ln1_gain, ln1_bias;
    Linear q, v, o;
    ad::Parameter k;  // [d_llm, d_llm], no bias
    ad::Parameter ln2_gain, ln2_bias;
    Linear ff1, ff2;
};

struct ModelParams {
    Linear patch_proj;  // L_P -> d_m
    std::optional<block::CvpeParams> cvpe;
    ReprogramParams reprogram;
    std::vector<BackboneLayer> backbone;
    Linear head;  // P * d_llm -> H, shared across channels

    /// Stable flat order: patch projection, cvpe, reprogramming, backbone, head.
    std::vector<ad::Parameter*> list();
    std::vector<const ad::Parameter*> list() const;
    std::size_t scalar_count() const;
    void zero_grad();
};

/// Graph handles for the reprogramming and backbone parameters.
struct ReprogramVars {
    ad::Var prototypes, q_w, q_b, k_w, v_w, v_b, o_w, o_b;
};
struct BackboneLayerVars {
    ad::Var ln1_gain, ln1_bias, q_w, q_b, k_w, v_w, v_b, o_w, o_b, ln2_gain, ln2_bias, ff1_w, ff1_b, ff2_w, ff2_b;
};

/// Cross-attention from patch queries [G, P, d_m] to the prototype bank, then a
/// linear map to d_llm. Groups never mix.
ad::Var reprogram(const ad::Var& x, const ReprogramVars& p, const block::AttentionConfig& cfg);
/// Pre-norm encoder over [G, P, d_llm], attention within each group only.
ad::Var backbone_forward(const ad::Var& x, std::span<const BackboneLayerVars> layers, std::size_t heads);

/// [N, P, d_m] -> [N, P, d_llm].
Tensor reprogram(const Tensor& x, const ReprogramParams& params, const block::AttentionConfig& cfg);
/// [N, P, d_llm] -> [N, P, d_llm].
Tensor backbone_forward(const Tensor& x, const std::vector<BackboneLayer>& layers, std::size_t heads);

class Model : public Trainable {
public:
    /// Parameters shared by both variants come from one seeded stream and the
    /// CVPE block from another, so vanilla and cvpe models built with the same
    /// seed start from identical shared weights.
    static Model create(const ModelConfig& config, std::uint64_t seed);
    Model(ModelConfig config, ModelParams params);

    const ModelConfig& config() const { return config_; }
    ModelParams& params() { return params_; }
    const ModelParams& params() const { return params_; }

    /// Batched forward on a graph. Each window is [N, T]; returns [B, N, H].
    /// With trainable = false parameters enter as constants.
    ad::Var forward(ad::Graph& graph, std::span<const Tensor* const> windows, bool trainable,
                    ad::ScoreCounter* counter);
    ad::Var forward(ad::Graph& graph, std::span<const Tensor* const> windows, bool trainable) override {
        return forward(graph, windows, trainable, nullptr);
    }
    std::vector<ad::Parameter*> parameters() override { return params_.list(); }
    /// [N, T] -> [N, H].
    Tensor forecast(const Tensor& window) const;
    std::vector<Tensor> forecast_batch(std::span<const Tensor* const> windows) const;

    void save(const std::filesystem::path& path) const;
    static Model load(const std::filesystem::path& path);

private:
    ModelConfig config_;
    ModelParams params_;
};

// Config serialisation (used by checkpoints and the CLI config echo).
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace cvpe::model

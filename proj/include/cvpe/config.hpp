#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cvpe/data.hpp"
#include "cvpe/model.hpp"
#include "cvpe/train.hpp"

namespace cvpe::config {

enum class DatasetSource { synthetic, csv };

struct DatasetConfig {
    std::string name = "synthetic";
    DatasetSource source = DatasetSource::synthetic;
    std::filesystem::path path;        // csv only
    std::string date_column = "date";  // csv only
    std::string target = "OT";
    data::SyntheticSpec synthetic;
};

/// Everything one experiment needs. Serialised as JSON; to_json(from_json(s))
/// is a fixed point for any accepted document.
struct RunConfig {
    DatasetConfig dataset;
    data::SplitSpec split = data::SplitSpec::named(data::SplitProtocol::ratio_70_10_20);
    /// Per-channel z-scoring fitted on the train segment, applied to all segments.
    bool scale = true;
    std::optional<std::size_t> select_k;
    model::ModelConfig model;  // horizon and variant are overridden per cell
    std::vector<model::EmbeddingVariant> variants{model::EmbeddingVariant::vanilla, model::EmbeddingVariant::cvpe};
    train::TrainConfig train;
    std::vector<std::size_t> horizons{8, 16, 32};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::filesystem::path output_dir = "runs/experiment";
    std::size_t jobs = 1;

    /// Every violated constraint, each naming the fields involved.
    std::vector<std::string> problems() const;
    void validate() const;
    /// Model config for one (variant, horizon) cell.
    model::ModelConfig cell_model(model::EmbeddingVariant variant, std::size_t horizon) const;
};

/// Collects structural problems (unknown keys, wrong types) as well as the
/// semantic ones from RunConfig::problems(), then throws ConfigError listing
/// all of them.
RunConfig parse(const std::string& json_text);
RunConfig load(const std::filesystem::path& path);
std::string to_json(const RunConfig& config);

/// Tiny configuration used by the gradient check (N=3, P=5, d_m=8, c=2, K=2,
/// d_llm=8, one backbone layer, 10 prototypes).
model::ModelConfig gradcheck_model_config();

std::string to_string(data::SplitProtocol p);

}  // namespace cvpe::config

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cvpe/config.hpp"
#include "cvpe/model.hpp"
#include "cvpe/train.hpp"

namespace cvpe::eval {

struct MetricPair {
    double mse = 0.0;
    double mae = 0.0;
};

/// Mean absolute difference over every element.
double mae(const Tensor& pred, const Tensor& target);

/// Maps one [N, T] window to an [N, H] forecast.
using Forecaster = std::function<Tensor(const Tensor& window)>;

/// Uniform average over windows, channels and horizon steps.
MetricPair evaluate(const Forecaster& forecaster, const train::WindowSet& windows);
MetricPair evaluate(const model::Model& model, const train::WindowSet& windows, std::size_t batch_size = 64);

/// Dataset after loading, feature selection and scaling, with its split points.
struct PreparedData {
    data::MultivariateSeries series;
    std::array<std::size_t, 3> boundaries{};
    std::vector<data::SelectionEntry> selected;
    std::vector<std::string> warnings;
};

PreparedData prepare(const config::RunConfig& config);

struct CellResult {
    std::string dataset;
    model::EmbeddingVariant variant = model::EmbeddingVariant::vanilla;
    std::size_t horizon = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    MetricPair metrics;
    /// Hash of the training batch schedule; equal across variants of a seed.
    std::uint64_t window_hash = 0;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    std::vector<train::EpochLoss> history;
};

/// Mean and sample standard deviation over seeds. horizon == 0 marks the
/// average over horizons (computed per seed first).
struct AggregateRow {
    std::string dataset;
    model::EmbeddingVariant variant = model::EmbeddingVariant::vanilla;
    std::size_t horizon = 0;
    std::size_t count = 0;
    MetricPair mean;
    MetricPair std;
};

struct ExperimentReport {
    std::vector<CellResult> cells;
    std::vector<AggregateRow> aggregates;
    std::string config_echo;

    bool any_failed() const;
    /// Aggregate for (variant, horizon); nullptr when absent.
    const AggregateRow* find(model::EmbeddingVariant variant, std::size_t horizon) const;
};

std::vector<AggregateRow> aggregate(const std::vector<CellResult>& cells);

/// Trains and evaluates one (variant, horizon, seed) cell. Never throws for
/// training failures; they are recorded in the result.
CellResult run_cell(const config::RunConfig& config, const PreparedData& data, model::EmbeddingVariant variant,
                    std::size_t horizon, std::uint64_t seed);

/// Runs every cell (config.jobs at a time) and aggregates.
ExperimentReport run_experiment(const config::RunConfig& config,
                                const std::function<void(const CellResult&)>& on_cell = {});

/// One row per cell: dataset,variant,horizon,seed,mse,mae,status,window_hash,epochs_run,best_epoch,error.
std::string report_csv(const ExperimentReport& report);
/// Aligned table of mean +- std per horizon with an average row.
std::string report_table(const ExperimentReport& report);
std::string history_csv(const CellResult& cell);
std::string history_filename(const CellResult& cell);

/// Writes config.json, report.csv, report.txt and one history file per cell.
/// Throws Error when `dir` exists and is non-empty unless `overwrite`.
void write_experiment(const std::filesystem::path& dir, const ExperimentReport& report, bool overwrite);

}  // namespace cvpe::eval

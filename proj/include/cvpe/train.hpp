#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvpe/autodiff.hpp"
#include "cvpe/data.hpp"
#include "cvpe/errors.hpp"
#include "cvpe/trainable.hpp"

namespace cvpe::train {

/// Paired (input, target) windows. inputs[i] is [N, T], targets[i] is [N, H];
/// starts[i] is the index of the first input step in the source series.
struct WindowSet {
    std::vector<Tensor> inputs;
    std::vector<Tensor> targets;
    std::vector<std::size_t> starts;

    std::size_t size() const { return inputs.size(); }
    bool empty() const { return inputs.empty(); }
};

/// Stride-1 windows whose forecast span [s + T, s + T + H) lies in
/// [segment_begin, segment_end). Context may reach back before segment_begin
/// (never before index 0), so val/test windows borrow history from earlier
/// segments while train windows stay inside the train segment.
WindowSet make_windows(const data::MultivariateSeries& series, std::size_t segment_begin, std::size_t segment_end,
                       std::size_t context, std::size_t horizon);
/// Number of windows make_windows would produce.
std::size_t window_count(std::size_t segment_begin, std::size_t segment_end, std::size_t context, std::size_t horizon);

/// Scalar loss node plus the graph that owns it.
struct LossValue {
    ad::Var node;
    double value = 0.0;
};

/// Mean of squared differences over every element.
LossValue mse_loss(const ad::Var& pred, const Tensor& target);
double mse(const Tensor& pred, const Tensor& target);

/// Runs reverse mode from `loss` and returns gradients aligned with `params`
/// (params' grad buffers are zeroed first).
std::vector<Tensor> backward(const LossValue& loss, const std::vector<ad::Parameter*>& params);

struct AdamState {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    std::vector<Tensor> m, v;

    /// One update from the parameters' current grad buffers.
    void apply(const std::vector<ad::Parameter*>& params);
};

struct TrainConfig {
    double lr = 1e-2;
    std::size_t batch_size = 8;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    std::size_t patience = 10;
};

struct EpochLoss {
    std::size_t epoch;
    double train_mse;
    double val_mse;
};

struct TrainResult {
    std::vector<EpochLoss> history;
    std::size_t best_epoch = 0;
    double best_val_mse = 0.0;
    /// FNV-1a over the full shuffling schedule for cfg.epochs epochs.
    std::uint64_t schedule_hash = 0;
};

/// Non-finite loss during training.
class DivergenceError : public NumericError {
public:
    DivergenceError(std::size_t epoch, std::size_t batch);
    std::size_t epoch() const { return epoch_; }
    std::size_t batch() const { return batch_; }

private:
    std::size_t epoch_, batch_;
};

/// Shuffled-batch order for every epoch, determined only by (seed, count, epochs).
std::vector<std::vector<std::size_t>> shuffle_schedule(std::size_t count, std::size_t epochs, std::uint64_t seed);
std::uint64_t schedule_hash(const std::vector<std::vector<std::size_t>>& schedule, std::span<const std::size_t> starts);

/// Mean MSE of the model over a window set (no gradients).
double evaluate_mse(Trainable& model, const WindowSet& windows, std::size_t batch_size = 64);

/// Adam over shuffled mini-batches. On return the model holds the parameters
/// with the best validation MSE.
TrainResult train_loop(Trainable& model, const WindowSet& train, const WindowSet& val, const TrainConfig& cfg,
                       const std::function<void(const EpochLoss&)>& on_epoch = {});

struct GradCheckOptions {
    double tolerance = 1e-4;
    double step = 1e-5;
    std::size_t samples = 16;
    std::uint64_t seed = 0;
    /// Negates this parameter's analytic gradient before comparison.
    std::optional<std::string> corrupt_parameter;
};

struct GradCheckEntry {
    std::string name;
    std::size_t coordinates = 0;
    double max_rel_error = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;
    double max_rel_error = 0.0;
    bool passed = true;
};

/// Central differences on up to `samples` random coordinates per tensor.
/// rel = |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
GradCheckReport grad_check(const std::vector<ad::Parameter*>& params, const std::function<double()>& loss,
                           const std::function<void()>& compute_grads, const GradCheckOptions& options);
/// MSE of model(inputs) against targets.
GradCheckReport grad_check(Trainable& model, const std::vector<Tensor>& inputs, const std::vector<Tensor>& targets,
                           const GradCheckOptions& options);

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor* const> items);

}  // namespace cvpe::train

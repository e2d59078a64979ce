#include "cvpe/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cvpe::train {

std::size_t window_count(std::size_t segment_begin, std::size_t segment_end, std::size_t context, std::size_t horizon) {
    const std::size_t first = segment_begin > context ? segment_begin - context : 0;
    if (segment_end < context + horizon || segment_end - horizon < first + context) return 0;
    return segment_end - horizon - context - first + 1;
}

WindowSet make_windows(const data::MultivariateSeries& series, std::size_t segment_begin, std::size_t segment_end,
                       std::size_t context, std::size_t horizon) {
    if (segment_end > series.length() || segment_begin > segment_end) {
        throw ShapeError("window segment outside series");
    }
    const std::size_t count = window_count(segment_begin, segment_end, context, horizon);
    const std::size_t first = segment_begin > context ? segment_begin - context : 0;
    const std::size_t n = series.channels();
    WindowSet out;
    out.inputs.reserve(count);
    out.targets.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t s = first + i;
        Tensor in({n, context}), tgt({n, horizon});
        for (std::size_t c = 0; c < n; ++c) {
            auto ch = series.channel(c);
            std::copy_n(ch.begin() + static_cast<std::ptrdiff_t>(s), context, in.row(c).begin());
            std::copy_n(ch.begin() + static_cast<std::ptrdiff_t>(s + context), horizon, tgt.row(c).begin());
        }
        out.inputs.push_back(std::move(in));
        out.targets.push_back(std::move(tgt));
        out.starts.push_back(s);
    }
    return out;
}

LossValue mse_loss(const ad::Var& pred, const Tensor& target) {
    auto node = ad::mse(pred, target);
    return LossValue{node, node.value()[0]};
}

double mse(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) throw ShapeError("mse: shape mismatch");
    if (pred.empty()) throw ShapeError("mse: empty tensors");
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) total += (pred[i] - target[i]) * (pred[i] - target[i]);
    return total / static_cast<double>(pred.size());
}

std::vector<Tensor> backward(const LossValue& loss, const std::vector<ad::Parameter*>& params) {
    for (auto* p : params) p->zero_grad();
    loss.node.graph()->backward(loss.node);
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (auto* p : params) grads.push_back(p->grad);
    return grads;
}

void AdamState::apply(const std::vector<ad::Parameter*>& params) {
    if (m.empty()) {
        for (auto* p : params) {
            m.emplace_back(p->value.shape());
            v.emplace_back(p->value.shape());
        }
    }
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i]->value.data();
        auto g = params[i]->grad.data();
        auto mi = m[i].data();
        auto vi = v[i].data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            mi[j] = beta1 * mi[j] + (1.0 - beta1) * g[j];
            vi[j] = beta2 * vi[j] + (1.0 - beta2) * g[j] * g[j];
            w[j] -= lr * (mi[j] / c1) / (std::sqrt(vi[j] / c2) + eps);
        }
    }
}

DivergenceError::DivergenceError(std::size_t epoch, std::size_t batch)
    : NumericError("train", "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch)),
      epoch_(epoch),
      batch_(batch) {}

std::vector<std::vector<std::size_t>> shuffle_schedule(std::size_t count, std::size_t epochs, std::uint64_t seed) {
    std::seed_seq seq{seed, std::uint64_t{0xBA7C}};
    std::mt19937_64 rng(seq);
    std::vector<std::vector<std::size_t>> schedule;
    for (std::size_t e = 0; e < epochs; ++e) {
        std::vector<std::size_t> order(count);
        for (std::size_t i = 0; i < count; ++i) order[i] = i;
        for (std::size_t i = count; i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(rng() % i);
            std::swap(order[i - 1], order[j]);
        }
        schedule.push_back(std::move(order));
    }
    return schedule;
}

std::uint64_t schedule_hash(const std::vector<std::vector<std::size_t>>& schedule, std::span<const std::size_t> starts) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&](std::uint64_t v) {
        for (int b = 0; b < 8; ++b) {
            h ^= (v >> (8 * b)) & 0xFF;
            h *= 1099511628211ULL;
        }
    };
    for (const auto& epoch : schedule) {
        for (std::size_t i : epoch) mix(i < starts.size() ? starts[i] : i);
    }
    return h;
}

Tensor stack(std::span<const Tensor* const> items) {
    if (items.empty()) throw ShapeError("stack: no items");
    Shape shape = items[0]->shape();
    std::vector<double> data;
    data.reserve(items.size() * items[0]->size());
    for (const Tensor* t : items) {
        if (t->shape() != shape) throw ShapeError("stack: shape mismatch");
        data.insert(data.end(), t->data().begin(), t->data().end());
    }
    shape.insert(shape.begin(), items.size());
    return Tensor(std::move(shape), std::move(data));
}

double evaluate_mse(Trainable& model, const WindowSet& windows, std::size_t batch_size) {
    if (windows.empty()) throw ShapeError("evaluate_mse: empty window set");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
        const std::size_t end = std::min(windows.size(), begin + batch_size);
        std::vector<const Tensor*> in, tgt;
        for (std::size_t i = begin; i < end; ++i) {
            in.push_back(&windows.inputs[i]);
            tgt.push_back(&windows.targets[i]);
        }
        ad::Graph g;
        auto pred = model.forward(g, in, false);
        const Tensor target = stack(tgt);
        total += mse(pred.value(), target) * static_cast<double>(target.size());
        count += target.size();
    }
    return total / static_cast<double>(count);
}

TrainResult train_loop(Trainable& model, const WindowSet& train, const WindowSet& val, const TrainConfig& cfg,
                       const std::function<void(const EpochLoss&)>& on_epoch) {
    if (train.empty() || val.empty()) throw ShapeError("train_loop needs non-empty train and validation windows");
    if (cfg.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    auto params = model.parameters();
    AdamState adam;
    adam.lr = cfg.lr;

    const auto schedule = shuffle_schedule(train.size(), cfg.epochs, cfg.seed);
    TrainResult result;
    result.schedule_hash = schedule_hash(schedule, train.starts);

    auto snapshot = [&] {
        std::vector<Tensor> values;
        for (auto* p : params) values.push_back(p->value);
        return values;
    };
    std::vector<Tensor> best = snapshot();
    result.best_val_mse = evaluate_mse(model, val);
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto& order = schedule[epoch - 1];
        double weighted = 0.0;
        std::size_t seen = 0;
        std::size_t batch_index = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            std::vector<const Tensor*> in, tgt;
            for (std::size_t i = begin; i < end; ++i) {
                in.push_back(&train.inputs[order[i]]);
                tgt.push_back(&train.targets[order[i]]);
            }
            ad::Graph g;
            LossValue loss;
            try {
                loss = mse_loss(model.forward(g, in, true), stack(tgt));
            } catch (const NumericError&) {
                throw DivergenceError(epoch, batch_index);
            }
            if (!std::isfinite(loss.value)) throw DivergenceError(epoch, batch_index);
            backward(loss, params);
            adam.apply(params);
            weighted += loss.value * static_cast<double>(end - begin);
            seen += end - begin;
        }
        const double val_mse = evaluate_mse(model, val);
        if (!std::isfinite(val_mse)) throw DivergenceError(epoch, batch_index);
        EpochLoss row{epoch, weighted / static_cast<double>(seen), val_mse};
        result.history.push_back(row);
        if (on_epoch) on_epoch(row);
        if (val_mse < result.best_val_mse) {
            result.best_val_mse = val_mse;
            result.best_epoch = epoch;
            best = snapshot();
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
    return result;
}

GradCheckReport grad_check(const std::vector<ad::Parameter*>& params, const std::function<double()>& loss,
                           const std::function<void()>& compute_grads, const GradCheckOptions& options) {
    for (auto* p : params) p->zero_grad();
    compute_grads();
    std::vector<Tensor> analytic;
    for (auto* p : params) {
        analytic.push_back(p->grad);
        if (options.corrupt_parameter && *options.corrupt_parameter == p->name) {
            for (double& g : analytic.back().data()) g = -g;
        }
    }
    GradCheckReport report;
    report.tolerance = options.tolerance;
    std::mt19937_64 rng(options.seed);
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto* p = params[pi];
        GradCheckEntry entry{p->name, 0, 0.0, true};
        std::vector<std::size_t> coords(p->value.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (coords.size() > options.samples) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.samples);
        }
        for (std::size_t idx : coords) {
            const double saved = p->value[idx];
            p->value[idx] = saved + options.step;
            const double up = loss();
            p->value[idx] = saved - options.step;
            const double down = loss();
            p->value[idx] = saved;
            const double fd = (up - down) / (2.0 * options.step);
            const double ga = analytic[pi][idx];
            const double rel = std::abs(ga - fd) / std::max(1e-8, std::abs(ga) + std::abs(fd));
            entry.max_rel_error = std::max(entry.max_rel_error, rel);
            ++entry.coordinates;
        }
        entry.passed = entry.max_rel_error <= options.tolerance;
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.passed = report.passed && entry.passed;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

GradCheckReport grad_check(Trainable& model, const std::vector<Tensor>& inputs, const std::vector<Tensor>& targets,
                           const GradCheckOptions& options) {
    std::vector<const Tensor*> in, tgt;
    for (const auto& t : inputs) in.push_back(&t);
    for (const auto& t : targets) tgt.push_back(&t);
    const Tensor target = stack(tgt);
    auto params = model.parameters();
    auto loss = [&] {
        ad::Graph g;
        return train::mse(model.forward(g, in, false).value(), target);
    };
    auto grads = [&] {
        ad::Graph g;
        auto l = mse_loss(model.forward(g, in, true), target);
        g.backward(l.node);
    };
    return grad_check(params, loss, grads, options);
}

}  // namespace cvpe::train

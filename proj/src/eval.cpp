#include "cvpe/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "cvpe/errors.hpp"

namespace cvpe::eval {

double mae(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape()) throw ShapeError("mae: shape mismatch");
    if (pred.empty()) throw ShapeError("mae: empty tensors");
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) total += std::abs(pred[i] - target[i]);
    return total / static_cast<double>(pred.size());
}

MetricPair evaluate(const Forecaster& forecaster, const train::WindowSet& windows) {
    if (windows.empty()) throw ShapeError("evaluate: empty test window set");
    double se = 0.0, ae = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const Tensor pred = forecaster(windows.inputs[i]);
        const Tensor& target = windows.targets[i];
        if (pred.shape() != target.shape()) throw ShapeError("evaluate: forecast shape mismatch");
        for (std::size_t j = 0; j < pred.size(); ++j) {
            const double d = pred[j] - target[j];
            se += d * d;
            ae += std::abs(d);
        }
        count += pred.size();
    }
    return {se / static_cast<double>(count), ae / static_cast<double>(count)};
}

MetricPair evaluate(const model::Model& model, const train::WindowSet& windows, std::size_t batch_size) {
    if (windows.empty()) throw ShapeError("evaluate: empty test window set");
    double se = 0.0, ae = 0.0;
    std::size_t count = 0;
    for (std::size_t begin = 0; begin < windows.size(); begin += batch_size) {
        const std::size_t end = std::min(windows.size(), begin + batch_size);
        std::vector<const Tensor*> in;
        for (std::size_t i = begin; i < end; ++i) in.push_back(&windows.inputs[i]);
        const auto preds = model.forecast_batch(in);
        for (std::size_t i = begin; i < end; ++i) {
            const Tensor& pred = preds[i - begin];
            const Tensor& target = windows.targets[i];
            for (std::size_t j = 0; j < pred.size(); ++j) {
                const double d = pred[j] - target[j];
                se += d * d;
                ae += std::abs(d);
            }
            count += pred.size();
        }
    }
    return {se / static_cast<double>(count), ae / static_cast<double>(count)};
}

PreparedData prepare(const config::RunConfig& config) {
    PreparedData out;
    data::MultivariateSeries series;
    if (config.dataset.source == config::DatasetSource::csv) {
        series = data::load_csv(config.dataset.path, config.dataset.date_column);
    } else {
        series = data::generate_synthetic(config.dataset.synthetic);
    }
    out.boundaries = data::resolve_boundaries(config.split, series.length());
    series = series.slice(0, out.boundaries[2]);
    if (config.select_k) {
        auto sel = data::select_top_k(series, series.slice(0, out.boundaries[0]), config.dataset.target, *config.select_k);
        series = std::move(sel.series);
        out.selected = std::move(sel.selected);
        out.warnings = std::move(sel.warnings);
    }
    if (config.scale) {
        auto scaler = data::Standardizer::fit(series.slice(0, out.boundaries[0]));
        series = scaler.apply(series);
    }
    out.series = std::move(series);
    return out;
}

CellResult run_cell(const config::RunConfig& config, const PreparedData& data, model::EmbeddingVariant variant,
                    std::size_t horizon, std::uint64_t seed) {
    CellResult cell;
    cell.dataset = config.dataset.name;
    cell.variant = variant;
    cell.horizon = horizon;
    cell.seed = seed;
    try {
        const std::size_t t = config.model.patch.context;
        const auto& b = data.boundaries;
        auto train_w = train::make_windows(data.series, 0, b[0], t, horizon);
        auto val_w = train::make_windows(data.series, b[0], b[1], t, horizon);
        auto test_w = train::make_windows(data.series, b[1], b[2], t, horizon);
        auto model = model::Model::create(config.cell_model(variant, horizon), seed);
        train::TrainConfig tc = config.train;
        tc.seed = seed;
        auto result = train::train_loop(model, train_w, val_w, tc);
        cell.history = std::move(result.history);
        cell.window_hash = result.schedule_hash;
        cell.epochs_run = cell.history.size();
        cell.best_epoch = result.best_epoch;
        cell.metrics = evaluate(model, test_w);
        cell.ok = std::isfinite(cell.metrics.mse) && std::isfinite(cell.metrics.mae);
        if (!cell.ok) cell.error = "non-finite test metrics";
    } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
    }
    return cell;
}

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

AggregateRow summarize(const std::string& dataset, model::EmbeddingVariant variant, std::size_t horizon,
                       const std::vector<double>& mse, const std::vector<double>& mae) {
    AggregateRow row;
    row.dataset = dataset;
    row.variant = variant;
    row.horizon = horizon;
    row.count = mse.size();
    row.mean = {mean_of(mse), mean_of(mae)};
    row.std = {std_of(mse), std_of(mae)};
    return row;
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<CellResult>& cells) {
    // Keys keep first-appearance order so the table follows the config.
    std::vector<std::pair<std::string, model::EmbeddingVariant>> groups;
    for (const auto& c : cells) {
        std::pair key{c.dataset, c.variant};
        if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
    }
    std::vector<AggregateRow> rows;
    for (const auto& [dataset, variant] : groups) {
        std::vector<std::size_t> horizons;
        std::map<std::uint64_t, std::vector<const CellResult*>> by_seed;
        for (const auto& c : cells) {
            if (c.dataset != dataset || c.variant != variant) continue;
            if (std::find(horizons.begin(), horizons.end(), c.horizon) == horizons.end()) horizons.push_back(c.horizon);
            if (c.ok) by_seed[c.seed].push_back(&c);
        }
        for (std::size_t h : horizons) {
            std::vector<double> mse, mae_v;
            for (const auto& c : cells) {
                if (c.dataset == dataset && c.variant == variant && c.horizon == h && c.ok) {
                    mse.push_back(c.metrics.mse);
                    mae_v.push_back(c.metrics.mae);
                }
            }
            if (!mse.empty()) rows.push_back(summarize(dataset, variant, h, mse, mae_v));
        }
        // The horizon average only covers seeds whose every horizon succeeded.
        std::vector<double> mse, mae_v;
        for (const auto& [seed, members] : by_seed) {
            if (members.size() != horizons.size()) continue;
            double s = 0.0, a = 0.0;
            for (const auto* c : members) {
                s += c->metrics.mse;
                a += c->metrics.mae;
            }
            mse.push_back(s / static_cast<double>(members.size()));
            mae_v.push_back(a / static_cast<double>(members.size()));
        }
        if (!mse.empty()) rows.push_back(summarize(dataset, variant, 0, mse, mae_v));
    }
    return rows;
}

bool ExperimentReport::any_failed() const {
    return std::any_of(cells.begin(), cells.end(), [](const CellResult& c) { return !c.ok; });
}

const AggregateRow* ExperimentReport::find(model::EmbeddingVariant variant, std::size_t horizon) const {
    for (const auto& r : aggregates) {
        if (r.variant == variant && r.horizon == horizon) return &r;
    }
    return nullptr;
}

ExperimentReport run_experiment(const config::RunConfig& config, const std::function<void(const CellResult&)>& on_cell) {
    config.validate();
    const PreparedData data = prepare(config);

    struct Job {
        model::EmbeddingVariant variant;
        std::size_t horizon;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (std::size_t h : config.horizons) {
        for (std::uint64_t s : config.seeds) {
            for (auto v : config.variants) jobs.push_back({v, h, s});
        }
    }
    ExperimentReport report;
    report.cells.resize(jobs.size());
    auto run = [&](std::size_t i) {
        report.cells[i] = run_cell(config, data, jobs[i].variant, jobs[i].horizon, jobs[i].seed);
    };
    if (config.jobs <= 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            run(i);
            if (on_cell) on_cell(report.cells[i]);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(config.jobs, jobs.size()); ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < jobs.size(); i = next++) run(i);
            });
        }
        for (auto& t : pool) t.join();
        if (on_cell) {
            for (const auto& c : report.cells) on_cell(c);
        }
    }
    report.aggregates = aggregate(report.cells);
    report.config_echo = config::to_json(config);
    return report;
}

namespace {

std::string exact(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fixed(double v, int digits) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c == '\n' ? ' ' : c;
    }
    return out + "\"";
}

std::string hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

std::string report_csv(const ExperimentReport& report) {
    std::ostringstream out;
    out << "dataset,variant,horizon,seed,mse,mae,status,window_hash,epochs_run,best_epoch,error\n";
    for (const auto& c : report.cells) {
        out << csv_field(c.dataset) << ',' << model::to_string(c.variant) << ',' << c.horizon << ',' << c.seed << ','
            << (c.ok ? exact(c.metrics.mse) : "") << ',' << (c.ok ? exact(c.metrics.mae) : "") << ','
            << (c.ok ? "ok" : "failed") << ',' << hex(c.window_hash) << ',' << c.epochs_run << ',' << c.best_epoch
            << ',' << csv_field(c.error) << '\n';
    }
    return out.str();
}

std::string report_table(const ExperimentReport& report) {
    std::vector<model::EmbeddingVariant> variants;
    std::vector<std::string> datasets;
    for (const auto& r : report.aggregates) {
        if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);
        if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
    }
    auto cell = [](const AggregateRow* r, bool mse) {
        if (!r) return std::string("-");
        const double m = mse ? r->mean.mse : r->mean.mae, s = mse ? r->std.mse : r->std.mae;
        return fixed(m, 4) + " +- " + fixed(s, 4);
    };
    const bool paired = variants.size() == 2 && variants[0] == model::EmbeddingVariant::vanilla &&
                        variants[1] == model::EmbeddingVariant::cvpe;

    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"Dataset", "H"};
    for (auto v : variants) {
        header.push_back(model::to_string(v) + " MSE");
        header.push_back(model::to_string(v) + " MAE");
    }
    if (paired) header.push_back("MSE gain");
    rows.push_back(header);
    for (const auto& ds : datasets) {
        std::vector<std::size_t> horizons;
        for (const auto& r : report.aggregates) {
            if (r.dataset == ds && r.horizon != 0 &&
                std::find(horizons.begin(), horizons.end(), r.horizon) == horizons.end()) {
                horizons.push_back(r.horizon);
            }
        }
        horizons.push_back(0);
        for (std::size_t h : horizons) {
            std::vector<std::string> row{h == horizons.front() ? ds : "", h == 0 ? "Avg" : std::to_string(h)};
            std::vector<const AggregateRow*> found;
            for (auto v : variants) {
                const AggregateRow* match = nullptr;
                for (const auto& r : report.aggregates) {
                    if (r.dataset == ds && r.variant == v && r.horizon == h) match = &r;
                }
                found.push_back(match);
                row.push_back(cell(match, true));
                row.push_back(cell(match, false));
            }
            if (paired) {
                row.push_back(found[0] && found[1] && found[0]->mean.mse > 0.0
                                  ? fixed(100.0 * (found[0]->mean.mse - found[1]->mean.mse) / found[0]->mean.mse, 1) + "%"
                                  : "-");
            }
            rows.push_back(row);
        }
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    std::ostringstream out;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        for (std::size_t i = 0; i < rows[k].size(); ++i) {
            out << rows[k][i] << std::string(width[i] - rows[k][i].size() + (i + 1 < rows[k].size() ? 2 : 0), ' ');
        }
        out << '\n';
        if (k == 0) {
            std::size_t total = 0;
            for (std::size_t w : width) total += w + 2;
            out << std::string(total - 2, '-') << '\n';
        }
    }
    std::size_t failed = 0;
    for (const auto& c : report.cells) failed += c.ok ? 0 : 1;
    out << "\nmean +- sample std over seeds; Avg averages horizons per seed first.\n";
    if (failed) out << failed << " cell(s) failed; see report.csv.\n";
    return out.str();
}

std::string history_csv(const CellResult& cell) {
    std::ostringstream out;
    out << "epoch,train_mse,val_mse\n";
    for (const auto& e : cell.history) out << e.epoch << ',' << exact(e.train_mse) << ',' << exact(e.val_mse) << '\n';
    return out.str();
}

std::string history_filename(const CellResult& cell) {
    return "history_" + cell.dataset + "_" + model::to_string(cell.variant) + "_h" + std::to_string(cell.horizon) +
           "_s" + std::to_string(cell.seed) + ".csv";
}

void write_experiment(const std::filesystem::path& dir, const ExperimentReport& report, bool overwrite) {
    namespace fs = std::filesystem;
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!overwrite) throw Error("output directory " + dir.string() + " is not empty (pass --overwrite to replace it)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
    auto write = [&](const std::string& name, const std::string& text) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) throw Error("cannot write " + (dir / name).string());
        f << text;
    };
    write("config.json", report.config_echo);
    write("report.csv", report_csv(report));
    write("report.txt", report_table(report));
    for (const auto& c : report.cells) write(history_filename(c), history_csv(c));
}

}  // namespace cvpe::eval

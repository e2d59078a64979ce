#include "cvpe/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <random>

#include <CLI11.hpp>

#include "cvpe/errors.hpp"
#include "cvpe/eval.hpp"
#include "cvpe/model.hpp"

namespace cvpe::cli {

config::RunConfig load_config(const std::string& path) {
    auto cfg = config::load(path);
    if (const char* dir = std::getenv(kOutputDirEnv); dir && *dir) cfg.output_dir = dir;
    return cfg;
}

PrepareSummary prepare_summary(const config::RunConfig& config) {
    PrepareSummary s;
    auto prepared = eval::prepare(config);
    const auto& b = prepared.boundaries;
    s.channels = prepared.series.channels();
    s.split_lengths = {b[0], b[1] - b[0], b[2] - b[1]};
    for (std::size_t h : config.horizons) {
        const std::size_t t = config.model.patch.context;
        s.window_counts.push_back(
            {h, {train::window_count(0, b[0], t, h), train::window_count(b[0], b[1], t, h), train::window_count(b[1], b[2], t, h)}});
    }
    s.selected = prepared.selected;
    s.warnings = prepared.warnings;
    if (config.dataset.source == config::DatasetSource::synthetic) {
        s.target_correlation = data::mean_abs_target_correlation(data::generate_synthetic(config.dataset.synthetic));
    }
    return s;
}

namespace {

template <class F>
int guarded(std::ostream& err, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        err << e.what() << '\n';
        return kValidation;
    } catch (const ParseError& e) {
        err << "input error: " << e.what() << '\n';
        return kValidation;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

struct Segments {
    train::WindowSet train, val, test;
};

Segments windows_for(const eval::PreparedData& data, std::size_t context, std::size_t horizon) {
    const auto& b = data.boundaries;
    return {train::make_windows(data.series, 0, b[0], context, horizon),
            train::make_windows(data.series, b[0], b[1], context, horizon),
            train::make_windows(data.series, b[1], b[2], context, horizon)};
}

}  // namespace

int cmd_prepare(const std::string& config_path, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        auto cfg = load_config(config_path);
        auto s = prepare_summary(cfg);
        out << "dataset: " << cfg.dataset.name << '\n';
        out << "channels: " << s.channels << '\n';
        out << "split lengths (train, val, test): " << s.split_lengths[0] << ", " << s.split_lengths[1] << ", "
            << s.split_lengths[2] << '\n';
        for (const auto& [h, c] : s.window_counts) {
            out << "windows at T=" << cfg.model.patch.context << ", H=" << h << ": " << c[0] << ", " << c[1] << ", "
                << c[2] << '\n';
        }
        if (!s.selected.empty()) {
            out << "selected features (|r| against " << cfg.dataset.target << " on train):\n";
            for (const auto& e : s.selected) {
                out << "  " << std::left << std::setw(12) << e.name << std::right << std::fixed << std::setprecision(4)
                    << e.correlation << '\n';
            }
            out.unsetf(std::ios::floatfield);
        }
        for (const auto& w : s.warnings) err << "warning: " << w << '\n';
        if (s.target_correlation) {
            out << "synthetic coupling " << cfg.dataset.synthetic.coupling << ", lag " << cfg.dataset.synthetic.lag
                << ", mean |r(target, driver)| " << std::fixed << std::setprecision(4) << *s.target_correlation << '\n';
            out.unsetf(std::ios::floatfield);
        }
        return kOk;
    });
}

int cmd_train(const std::string& config_path, const std::string& variant_name, std::optional<std::size_t> horizon,
              std::optional<std::uint64_t> seed, const std::string& checkpoint, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        auto cfg = load_config(config_path);
        const auto variant = model::parse_variant(variant_name);
        const std::size_t h = horizon.value_or(cfg.horizons.front());
        const std::uint64_t s = seed.value_or(cfg.seeds.front());
        auto data = eval::prepare(cfg);
        auto w = windows_for(data, cfg.model.patch.context, h);
        auto m = model::Model::create(cfg.cell_model(variant, h), s);
        train::TrainConfig tc = cfg.train;
        tc.seed = s;
        out << "training " << variant_name << " H=" << h << " seed=" << s << " on " << w.train.size()
            << " windows (" << m.params().scalar_count() << " parameters)\n";
        auto result = train::train_loop(m, w.train, w.val, tc, [&](const train::EpochLoss& e) {
            out << "epoch " << e.epoch << "  train_mse " << sci(e.train_mse) << "  val_mse " << sci(e.val_mse) << '\n';
        });
        auto metrics = eval::evaluate(m, w.test);
        out << "best epoch " << result.best_epoch << "  val_mse " << sci(result.best_val_mse) << '\n';
        out << "test mse " << sci(metrics.mse) << "  mae " << sci(metrics.mae) << '\n';
        const std::filesystem::path path = checkpoint.empty() ? cfg.output_dir / "model.ckpt" : std::filesystem::path(checkpoint);
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        m.save(path);
        out << "checkpoint: " << path.string() << '\n';
        return kOk;
    });
}

int cmd_evaluate(const std::string& config_path, const std::string& checkpoint, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        auto cfg = load_config(config_path);
        auto m = model::Model::load(checkpoint);
        const auto& mc = m.config();
        auto data = eval::prepare(cfg);
        auto w = windows_for(data, mc.patch.context, mc.horizon);
        if (data.series.channels() == 0) throw ConfigError("dataset has no channels");
        auto metrics = eval::evaluate(m, w.test);
        out << model::to_string(mc.variant) << " H=" << mc.horizon << " on " << w.test.size() << " test windows\n";
        out << "test mse " << sci(metrics.mse) << "  mae " << sci(metrics.mae) << '\n';
        return kOk;
    });
}

train::GradCheckReport run_gradcheck(const GradCheckRequest& request) {
    auto mc = config::gradcheck_model_config();
    auto m = model::Model::create(mc, request.seed);
    std::mt19937_64 rng(request.seed + 1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Tensor> inputs, targets;
    for (std::size_t i = 0; i < request.batch; ++i) {
        Tensor x({request.variates, mc.patch.context}), y({request.variates, mc.horizon});
        for (double& v : x.data()) v = normal(rng);
        for (double& v : y.data()) v = normal(rng);
        inputs.push_back(std::move(x));
        targets.push_back(std::move(y));
    }
    train::GradCheckOptions opts;
    opts.tolerance = request.tolerance;
    opts.seed = request.seed;
    opts.corrupt_parameter = request.inject_fault;
    return train::grad_check(m, inputs, targets, opts);
}

int cmd_gradcheck(const GradCheckRequest& request, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (!(request.tolerance > 0.0)) throw ConfigError("--tolerance must be positive");
        auto report = run_gradcheck(request);
        if (request.inject_fault) {
            bool known = false;
            for (const auto& e : report.entries) known = known || e.name == *request.inject_fault;
            if (!known) throw ConfigError("--inject-fault names no parameter: " + *request.inject_fault);
        }
        std::size_t width = 0;
        for (const auto& e : report.entries) width = std::max(width, e.name.size());
        for (const auto& e : report.entries) {
            out << std::left << std::setw(static_cast<int>(width)) << e.name << std::right << "  " << std::setw(3)
                << e.coordinates << " coords  max rel err " << sci(e.max_rel_error) << (e.passed ? "" : "  FAIL") << '\n';
        }
        out << "max rel err " << sci(report.max_rel_error) << " (tolerance " << sci(report.tolerance) << "): "
            << (report.passed ? "PASS" : "FAIL") << '\n';
        return report.passed ? kOk : kCheckFailed;
    });
}

int cmd_experiment(const std::string& config_path, bool overwrite, std::optional<std::size_t> jobs, std::ostream& out,
                   std::ostream& err) {
    return guarded(err, [&] {
        auto cfg = load_config(config_path);
        if (jobs) {
            cfg.jobs = *jobs;
            cfg.validate();
        }
        namespace fs = std::filesystem;
        if (fs::exists(cfg.output_dir) && !fs::is_empty(cfg.output_dir) && !overwrite) {
            err << "output directory " << cfg.output_dir.string() << " is not empty (pass --overwrite to replace it)\n";
            return kValidation;
        }
        auto report = eval::run_experiment(cfg, [&](const eval::CellResult& c) {
            out << c.dataset << ' ' << model::to_string(c.variant) << " H=" << c.horizon << " seed=" << c.seed << ": ";
            if (c.ok) {
                out << "mse " << sci(c.metrics.mse) << " mae " << sci(c.metrics.mae) << " (" << c.epochs_run
                    << " epochs)\n";
            } else {
                out << "FAILED: " << c.error << '\n';
            }
        });
        eval::write_experiment(cfg.output_dir, report, overwrite);
        out << '\n' << eval::report_table(report);
        out << "wrote " << cfg.output_dir.string() << '\n';
        return report.any_failed() ? kRuntime : kOk;
    });
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"CVPE forecaster: data preparation, training, evaluation and A/B experiments"};
    app.require_subcommand(1);

    std::string config_path, variant = "cvpe", checkpoint;
    std::optional<std::size_t> horizon, jobs;
    std::optional<std::uint64_t> seed;
    bool overwrite = false;
    GradCheckRequest gc;
    std::string fault;

    auto* prepare = app.add_subcommand("prepare", "Summarise a dataset: channels, splits, windows, selected features");
    prepare->add_option("config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);

    auto* train_cmd = app.add_subcommand("train", "Train one model and save a checkpoint");
    train_cmd->add_option("config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--variant", variant, "vanilla or cvpe")->check(CLI::IsMember({"vanilla", "cvpe"}));
    train_cmd->add_option("--horizon", horizon, "Forecast horizon (default: first in config)");
    train_cmd->add_option("--seed", seed, "Seed (default: first in config)");
    train_cmd->add_option("--checkpoint", checkpoint, "Checkpoint path (default: <output_dir>/model.ckpt)");

    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test segment");
    evaluate->add_option("config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--checkpoint", checkpoint, "Checkpoint path")->required()->check(CLI::ExistingFile);

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
    gradcheck->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();
    gradcheck->add_option("--seed", gc.seed, "Seed for parameters, data and sampled coordinates");
    gradcheck->add_option("--inject-fault", fault, "Negate the analytic gradient of this parameter")
        ->expected(0, 1)
        ->default_str("cvpe.routers");

    auto* experiment = app.add_subcommand("experiment", "Run the variant x horizon x seed grid and write reports");
    experiment->add_option("config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    experiment->add_flag("--overwrite", overwrite, "Replace an existing output directory");
    experiment->add_option("--jobs", jobs, "Cells run in parallel (default: config jobs)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kValidation;
    }

    if (*prepare) return cmd_prepare(config_path, out, err);
    if (*train_cmd) return cmd_train(config_path, variant, horizon, seed, checkpoint, out, err);
    if (*evaluate) return cmd_evaluate(config_path, checkpoint, out, err);
    if (*gradcheck) {
        if (gradcheck->count("--inject-fault")) gc.inject_fault = fault.empty() ? "cvpe.routers" : fault;
        return cmd_gradcheck(gc, out, err);
    }
    if (*experiment) return cmd_experiment(config_path, overwrite, jobs, out, err);
    return kValidation;
}

}  // namespace cvpe::cli

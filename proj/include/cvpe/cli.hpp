#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cvpe/config.hpp"
#include "cvpe/train.hpp"

namespace cvpe::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kRuntime = 2, kCheckFailed = 3 };

/// Environment variable that replaces the config's output_dir when set.
inline constexpr const char* kOutputDirEnv = "CVPE_OUTPUT_DIR";

/// Loads and validates a config file, applying the output-dir override.
config::RunConfig load_config(const std::string& path);

struct PrepareSummary {
    std::size_t channels = 0;
    std::array<std::size_t, 3> split_lengths{};
    std::vector<std::pair<std::size_t, std::array<std::size_t, 3>>> window_counts;  // per horizon
    std::vector<data::SelectionEntry> selected;
    std::vector<std::string> warnings;
    std::optional<double> target_correlation;  // synthetic only, before scaling
};

PrepareSummary prepare_summary(const config::RunConfig& config);

struct GradCheckRequest {
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
    std::size_t variates = 3;
    std::size_t batch = 2;
    std::optional<std::string> inject_fault;  // parameter whose analytic gradient is negated
};

train::GradCheckReport run_gradcheck(const GradCheckRequest& request);

// Each command writes human-readable output to `out`, diagnostics to `err`,
// and returns an ExitCode.
int cmd_prepare(const std::string& config_path, std::ostream& out, std::ostream& err);
int cmd_train(const std::string& config_path, const std::string& variant, std::optional<std::size_t> horizon,
              std::optional<std::uint64_t> seed, const std::string& checkpoint, std::ostream& out, std::ostream& err);
int cmd_evaluate(const std::string& config_path, const std::string& checkpoint, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradCheckRequest& request, std::ostream& out, std::ostream& err);
int cmd_experiment(const std::string& config_path, bool overwrite, std::optional<std::size_t> jobs, std::ostream& out,
                   std::ostream& err);

/// Full command-line entry point (argv[0] included).
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace cvpe::cli
